//! `apr`: one binary covering dataset synthesis, payload preprocessing,
//! training, evaluation, single-frame inference, the pose service, and
//! the finite-difference gradient check.
//!
//! Exit codes: 0 success, 1 domain or contract error, 2 usage error.
//! `APR_LOG` selects log verbosity (default `info`); logs go to stderr
//! so stdout stays machine-readable.

mod cache;
mod config;

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use apr_core::data::{generate_dataset, input_from_bytes, load_input, load_manifest};
use apr_core::eval::{evaluate, export_trajectory, to_world_pose};
use apr_core::geometry::minmax_fit;
use apr_core::lidar::{bev_histogram, read_cloud, sample_point_features, BEV_SIZE};
use apr_core::model::{gradcheck_model, AprConfig, AprModel, Modality};
use apr_core::service::{serve, InitPoseService};
use apr_core::train::{fit, load_checkpoint, TrainSample};
use apr_core::AprError;

use cache::{write_cache, BEV_CACHE_MAGIC, POINTS_CACHE_MAGIC};
use config::RunConfig;

/// Pass threshold for the gradient check, shared with the test suite.
const GRADCHECK_THRESHOLD: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "apr", version, about = "Absolute pose regression pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; absent keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override every configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the configured model modality.
    #[arg(long, global = true, value_name = "MODALITY", value_parser = parse_modality)]
    modality: Option<Modality>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print a machine-readable JSON summary to standard output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: payload files plus train/test manifests.
    Synth,
    /// Precompute BEV or point-feature caches for every cloud in a manifest.
    Preprocess(DataArgs),
    /// Train on a manifest; checkpoints land in the output directory.
    Train(DataArgs),
    /// Evaluate a checkpoint over a manifest and report error statistics.
    Eval(EvalArgs),
    /// Run one payload file through a checkpoint and print the pose.
    Infer(InferArgs),
    /// Serve pose estimates over newline-delimited JSON on TCP.
    Serve(ServeArgs),
    /// Check model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest to read.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest to read.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    /// Payload file in the checkpoint modality's format.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    /// Override the configured port.
    #[arg(long, value_name = "PORT")]
    port: Option<u16>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Coordinates sampled per tensor; omit to check every coordinate.
    #[arg(long, value_name = "N")]
    coords: Option<usize>,
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    s.parse().map_err(|e: AprError| e.to_string())
}

enum RunError {
    Usage(String),
    Failed(AprError),
}

impl From<AprError> for RunError {
    fn from(e: AprError) -> RunError {
        RunError::Failed(e)
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("APR_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Failed(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> RunResult<()> {
    let cfg = effective_config(&cli.common)?;
    echo_config(&cfg, cli.common.out.as_deref())?;
    match &cli.command {
        Command::Synth => cmd_synth(&cli.common, &cfg),
        Command::Preprocess(args) => cmd_preprocess(&cli.common, &cfg, args),
        Command::Train(args) => cmd_train(&cli.common, &cfg, args),
        Command::Eval(args) => cmd_eval(&cli.common, &cfg, args),
        Command::Infer(args) => cmd_infer(&cli.common, &cfg, args),
        Command::Serve(args) => cmd_serve(&cfg, args),
        Command::Gradcheck(args) => cmd_gradcheck(&cli.common, &cfg, args),
    }
}

/// File config overlaid with flag overrides, then revalidated.
fn effective_config(common: &Common) -> RunResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = common.modality {
        cfg.model.modality = m;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
        cfg.preprocess.sample_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Log every effective value and, when an output directory is given,
/// write it there as effective-config.toml. Feeding that file back via
/// --config reruns the identical seeded experiment.
fn echo_config(cfg: &RunConfig, out: Option<&Path>) -> RunResult<()> {
    let text = cfg.to_toml()?;
    for line in text.lines() {
        log::info!("config: {line}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| AprError::io(dir, e))?;
        let path = dir.join("effective-config.toml");
        fs::write(&path, &text).map_err(|e| AprError::io(&path, e))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn require_out(common: &Common) -> RunResult<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| RunError::Usage("this subcommand needs --out DIR".into()))
}

fn cmd_synth(common: &Common, cfg: &RunConfig) -> RunResult<()> {
    let out = require_out(common)?;
    let paths = generate_dataset(&cfg.synth, &out)?;
    let train = load_manifest(&paths.train)?;
    let test = load_manifest(&paths.test)?;
    log::info!(
        "{} frames ({} train, {} test) under {}",
        cfg.synth.frames,
        train.records.len(),
        test.records.len(),
        out.display()
    );
    if common.json {
        println!(
            "{}",
            serde_json::json!({
                "train_manifest": paths.train,
                "test_manifest": paths.test,
                "train_frames": train.records.len(),
                "test_frames": test.records.len(),
            })
        );
    } else {
        println!("wrote {} frames under {}", cfg.synth.frames, out.display());
    }
    Ok(())
}

fn cmd_preprocess(common: &Common, cfg: &RunConfig, args: &DataArgs) -> RunResult<()> {
    let out = require_out(common)?;
    let manifest = load_manifest(&args.data)?;
    let mut written = 0usize;
    let mut skipped = 0usize;
    for record in &manifest.records {
        let Some(rel) = &record.cloud else {
            skipped += 1;
            continue;
        };
        let cloud = read_cloud(&manifest.resolve(rel))?;
        match cfg.model.modality {
            Modality::Image => {
                return Err(AprError::Config(
                    "model.modality image: image payloads are consumed as-is, \
                     only bev and points build caches"
                        .into(),
                )
                .into());
            }
            Modality::Bev => {
                let bev = bev_histogram(&cloud, &cfg.preprocess.bev)?;
                let path = out.join(format!("frame-{}.bev", record.frame));
                write_cache(&path, BEV_CACHE_MAGIC, &[2, BEV_SIZE, BEV_SIZE], &bev.grid)?;
                verify_cache(&path, BEV_CACHE_MAGIC, &bev.grid)?;
            }
            Modality::Points => {
                let sampled = sample_point_features(
                    &cloud,
                    cfg.model.points.input_points,
                    cfg.preprocess.crop_radius_m,
                    cfg.preprocess.sample_seed,
                )?;
                let flat: Vec<f64> = sampled.features.iter().flatten().copied().collect();
                let path = out.join(format!("frame-{}.pts", record.frame));
                write_cache(&path, POINTS_CACHE_MAGIC, &[sampled.features.len(), 6], &flat)?;
                verify_cache(&path, POINTS_CACHE_MAGIC, &flat)?;
            }
        }
        written += 1;
    }
    log::info!("cached {written} frames ({skipped} skipped) under {}", out.display());
    if common.json {
        println!(
            "{}",
            serde_json::json!({ "written": written, "skipped": skipped, "dir": out })
        );
    } else {
        println!("cached {written} frames under {}", out.display());
    }
    Ok(())
}

/// Read a just-written cache back and compare, so disk corruption shows
/// up at build time rather than in a later training run.
fn verify_cache(path: &Path, magic: &[u8; 8], want: &[f64]) -> RunResult<()> {
    let (_, data) = cache::read_cache(path, magic)?;
    if data != want {
        return Err(AprError::io(path, "cache readback does not match written data").into());
    }
    Ok(())
}

fn cmd_train(common: &Common, cfg: &RunConfig, args: &DataArgs) -> RunResult<()> {
    let manifest = load_manifest(&args.data)?;
    let mut model = AprModel::new(cfg.model.clone(), cfg.train.seed)?;
    let positions: Vec<[f64; 3]> = manifest.records.iter().map(|r| r.pose.position).collect();
    if positions.is_empty() {
        return Err(AprError::domain(format!("{}: empty manifest", args.data.display())).into());
    }
    let norm = minmax_fit(&positions)?;

    let mut samples = Vec::with_capacity(manifest.records.len());
    for (i, record) in manifest.records.iter().enumerate() {
        let input = load_input(
            &manifest,
            record,
            &cfg.model,
            &cfg.preprocess,
            Some(cfg.train.seed.wrapping_add(i as u64)),
        )?;
        let Some(input) = input else {
            log::warn!("frame {}: no {} payload, skipped", record.frame, cfg.model.modality);
            continue;
        };
        let q = record.pose.orientation;
        samples.push(TrainSample {
            input,
            position: apr_core::geometry::minmax_apply(&norm, record.pose.position),
            orientation: [q.w, q.x, q.y, q.z],
        });
    }
    log::info!("training on {} frames from {}", samples.len(), args.data.display());

    let t0 = Instant::now();
    let fit_log = fit(&mut model, &samples, &cfg.train, &norm, common.out.as_deref())?;
    let seconds = t0.elapsed().as_secs_f64();
    let last = fit_log.epochs.last().expect("fit ran at least one epoch");
    log::info!(
        "trained {} epochs in {:.1}s, final L_pose {:.6}",
        fit_log.epochs.len(),
        seconds,
        last.l_pose
    );
    if common.json {
        println!(
            "{}",
            serde_json::json!({
                "epochs": fit_log.epochs.len(),
                "seconds": seconds,
                "final_l_p": last.l_p,
                "final_l_o": last.l_o,
                "final_l_pose": last.l_pose,
                "checkpoint": common.out.as_ref().map(|d| d.join("checkpoint-final.apr")),
            })
        );
    } else {
        println!(
            "trained {} epochs, final L_pose {:.6}",
            fit_log.epochs.len(),
            last.l_pose
        );
    }
    Ok(())
}

fn cmd_eval(common: &Common, cfg: &RunConfig, args: &EvalArgs) -> RunResult<()> {
    let (model, norm) = load_checkpoint(&args.ckpt)?;
    let manifest = load_manifest(&args.data)?;
    let report = evaluate(&model, &norm, &manifest, &cfg.preprocess)?;
    if let Some(dir) = &common.out {
        let (csv, svg) = export_trajectory(&report, &dir.join("trajectory"))?;
        log::info!("wrote {} and {}", csv.display(), svg.display());
    }
    if common.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!(
            "median position error: {:.3} m\n\
             median orientation error: {:.3} deg\n\
             mean position error: {:.3} m\n\
             mean orientation error: {:.3} deg\n\
             mean inference: {:.1} ms\n\
             frames: {} ({} skipped)",
            report.median_position_m,
            report.median_orientation_deg,
            report.mean_position_m,
            report.mean_orientation_deg,
            report.mean_inference_ms,
            report.frames.len(),
            report.skipped.len()
        );
    }
    Ok(())
}

fn cmd_infer(common: &Common, cfg: &RunConfig, args: &InferArgs) -> RunResult<()> {
    let (model, norm) = load_checkpoint(&args.ckpt)?;
    let bytes = fs::read(&args.input).map_err(|e| AprError::io(&args.input, e))?;
    let t0 = Instant::now();
    let input = input_from_bytes(&bytes, &model.config, &cfg.preprocess)?;
    let out = model.predict(&input);
    let pose = to_world_pose(&out, &norm)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let q = pose.orientation;
    if common.json {
        println!(
            "{}",
            serde_json::json!({
                "position": pose.position,
                "quaternion": [q.w, q.x, q.y, q.z],
                "inference_ms": ms,
            })
        );
    } else {
        println!(
            "position {:.6} {:.6} {:.6}\nquaternion {:.6} {:.6} {:.6} {:.6}",
            pose.position[0], pose.position[1], pose.position[2], q.w, q.x, q.y, q.z
        );
    }
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, args: &ServeArgs) -> RunResult<()> {
    let (model, norm) = load_checkpoint(&args.ckpt)?;
    let port = args.port.unwrap_or(cfg.service.port);
    let modality = model.config.modality;
    let service = InitPoseService::new(
        model,
        norm,
        cfg.preprocess.clone(),
        cfg.service.covariance_diag,
    );
    let listener = TcpListener::bind(("0.0.0.0", port))
        .map_err(|e| AprError::io(format!("tcp port {port}"), e))?;
    // Port 0 asks the OS for a free one; report what was actually bound.
    let bound = listener
        .local_addr()
        .map_err(|e| AprError::io(format!("tcp port {port}"), e))?
        .port();
    log::info!("serving {modality} pose estimates on port {bound}");
    serve(listener, Arc::new(service))?;
    Ok(())
}

fn cmd_gradcheck(common: &Common, cfg: &RunConfig, args: &GradcheckArgs) -> RunResult<()> {
    let primitives = apr_core::diff::primitive_fd_suite(cfg.train.seed);
    let mut max_rel = 0.0f64;
    for (name, err) in &primitives {
        log::info!("primitive {name}: rel err {err:.3e}");
        max_rel = max_rel.max(*err);
    }

    let modalities: Vec<Modality> = match common.modality {
        Some(m) => vec![m],
        None => vec![Modality::Image, Modality::Bev, Modality::Points],
    };
    let mut reports = serde_json::Map::new();
    for m in &modalities {
        let reduced = AprConfig::reduced(*m);
        let report = gradcheck_model(&reduced, args.coords, cfg.train.seed)?;
        println!("{m}: {report}");
        max_rel = max_rel.max(report.max_rel_err);
        reports.insert(
            m.to_string(),
            serde_json::json!({
                "max_rel_err": report.max_rel_err,
                "worst_param": report.worst_param,
                "coords_checked": report.coords_checked,
            }),
        );
    }
    println!("max relative error: {max_rel:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})");
    if common.json {
        println!(
            "{}",
            serde_json::json!({
                "primitives_max_rel_err": primitives.iter().map(|(_, e)| *e).fold(0.0, f64::max),
                "model": reports,
                "max_rel_err": max_rel,
                "threshold": GRADCHECK_THRESHOLD,
            })
        );
    }
    if max_rel >= GRADCHECK_THRESHOLD {
        return Err(AprError::domain(format!(
            "gradient check failed: max relative error {max_rel:.3e} >= {GRADCHECK_THRESHOLD:.0e}"
        ))
        .into());
    }
    Ok(())
}
