//! Release gate. One test per acceptance criterion, each printing a
//! single PASS line with its measured numbers (visible under
//! --nocapture); a failure panics with the offending values.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apr_core::data::{
    generate_dataset, load_input, load_manifest, save_manifest, PreprocessConfig,
    SyntheticWorldConfig,
};
use apr_core::diff::{Graph, ParamRegistry, Tensor};
use apr_core::eval::{evaluate, median, to_world_pose, EvalReport};
use apr_core::geometry::{minmax_apply, position_error, NormalizationStats, Pose, Quat};
use apr_core::lidar::{
    bev_histogram, fps_greedy, read_cloud, sample_point_features, write_cloud, BevConfig,
    FpsTieBreak, PointCloud,
};
use apr_core::model::{
    cnn, gradcheck_model, points, transformer, AprConfig, AprModel, Modality, ModelInput,
    POS_BRANCH,
};
use apr_core::service::{serve, InitPoseRequest, InitPoseResponse, InitPoseService};
use apr_core::train::{
    combined_loss, fit, load_checkpoint, pose_loss_graph, save_checkpoint, TrainConfig,
    TrainSample,
};

/// Wall-clock-sensitive tests take this lock so their time budgets are
/// not distorted by each other.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    match HEAVY.lock() {
        Ok(g) => g,
        Err(poisoned) => poisoned.into_inner(),
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(0.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn criterion_gradient_correctness() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for modality in [Modality::Image, Modality::Bev, Modality::Points] {
        let cfg = AprConfig::reduced(modality);
        let report = gradcheck_model(&cfg, None, 17).unwrap();
        assert!(
            report.passes(1e-3),
            "gradcheck {modality} failed: {report}"
        );
        worst = worst.max(report.max_rel_err);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 300.0,
        "gradcheck suite took {elapsed:.0}s, budget is 300s"
    );
    println!(
        "PASS gradient correctness: max rel err {worst:.3e} < 1e-3 across all modalities, {elapsed:.1}s"
    );
}

#[test]
fn criterion_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut max_grad_err = 0.0f64;
    for _ in 0..1000 {
        let l_p: f64 = rng.gen_range(0.0..5.0);
        let l_o: f64 = rng.gen_range(0.0..5.0);
        assert_eq!(combined_loss(l_p, l_o, 0.0, 0.0), l_p + l_o);

        let s_x: f64 = rng.gen_range(-3.0..3.0);
        let s_q: f64 = rng.gen_range(-3.0..3.0);
        assert_eq!(combined_loss(0.0, 0.0, s_x, s_q), s_x + s_q);

        let pos: [f64; 3] = [0; 3].map(|_| rng.gen_range(-2.0..2.0));
        let tgt_pos: [f64; 3] = [0; 3].map(|_| rng.gen_range(-2.0..2.0));
        let ori: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let tgt_ori: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let lp_direct: f64 = (0..3).map(|d| (pos[d] - tgt_pos[d]).abs()).sum();
        let lo_direct: f64 = (0..4).map(|d| (ori[d] - tgt_ori[d]).abs()).sum();

        let mut reg = ParamRegistry::new();
        reg.insert("loss.s_x", Tensor::scalar(s_x));
        reg.insert("loss.s_q", Tensor::scalar(s_q));
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![1, 3], pos.to_vec()));
        let o = g.constant(Tensor::new(vec![1, 4], ori.to_vec()));
        let nodes = pose_loss_graph(&mut g, &reg, p, o, tgt_pos, tgt_ori);
        g.backward(nodes.l_pose, &mut reg);

        let want_sx = -lp_direct * (-s_x).exp() + 1.0;
        let want_sq = -lo_direct * (-s_q).exp() + 1.0;
        let got_sx = reg.grad_by_name("loss.s_x").unwrap()[0];
        let got_sq = reg.grad_by_name("loss.s_q").unwrap()[0];
        max_grad_err = max_grad_err
            .max((got_sx - want_sx).abs())
            .max((got_sq - want_sq).abs());
    }
    assert!(
        max_grad_err < 1e-9,
        "temperature gradient off by {max_grad_err:.3e}"
    );
    println!(
        "PASS loss identities: 1000 draws, max temperature-gradient error {max_grad_err:.3e} < 1e-9"
    );
}

/// Greedy FPS re-derived from the definition: every pick maximizes the
/// distance to the nearest already-picked point, recomputed from
/// scratch, first lowest index winning ties.
fn fps_oracle(xyz: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let dist2 = |a: [f64; 3], b: [f64; 3]| -> f64 {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    let mut picked = vec![start];
    while picked.len() < k {
        let mut best_i = usize::MAX;
        let mut best_d = -1.0;
        for i in 0..xyz.len() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked
                .iter()
                .map(|&p| dist2(xyz[i], xyz[p]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best_i = i;
            }
        }
        picked.push(best_i);
    }
    picked
}

#[test]
fn criterion_fps_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let n = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=n);
        let start = rng.gen_range(0..n);
        let xyz: Vec<[f64; 3]> = (0..n)
            .map(|_| [0; 3].map(|_| rng.gen_range(-5.0..5.0)))
            .collect();
        let got = fps_greedy(&xyz, k, start, FpsTieBreak::LowestIndex);
        let want = fps_oracle(&xyz, k, start);
        assert_eq!(got, want, "case {case}: n={n} k={k} start={start}");
    }
    println!("PASS FPS oracle equivalence: 100 seeded clouds, exact index match");
}

#[test]
fn criterion_bev_conservation() {
    let uncapped = BevConfig {
        cap: f64::INFINITY,
        ..BevConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let n = rng.gen_range(1..400);
        // Wider than the grid so some points land out of bounds.
        let cloud = PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-10.0..50.0),
                        rng.gen_range(-30.0..30.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(0.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap();
        let bev = bev_histogram(&cloud, &uncapped).unwrap();
        for bin in 0..2 {
            let in_bounds = cloud
                .points
                .iter()
                .filter(|p| {
                    let z_bin = usize::from(p[2] >= uncapped.z_split);
                    p[0] >= 0.0
                        && p[0] < uncapped.x_max
                        && p[1] >= -uncapped.y_max
                        && p[1] < uncapped.y_max
                        && z_bin == bin
                })
                .count() as f64;
            let sum: f64 = (0..256)
                .flat_map(|r| (0..256).map(move |c| (r, c)))
                .map(|(r, c)| bev.get(bin, r, c))
                .sum();
            assert_eq!(sum, in_bounds, "bin {bin} count not conserved");
        }
    }

    let single = PointCloud::new(vec![[16.0, 0.0, 1.0, 0.7]]).unwrap();
    let bev = bev_histogram(&single, &BevConfig::default()).unwrap();
    assert_eq!(bev.get(1, 128, 128), 1.0 / 32.0);
    let total: f64 = bev.grid.iter().sum();
    assert_eq!(total, 1.0 / 32.0, "exactly one nonzero cell expected");
    println!(
        "PASS BEV conservation: 100 uncapped clouds conserve counts; single point lands at (128,128) bin 1"
    );
}

#[test]
fn criterion_shape_and_structure() {
    // Image and BEV feature-map endpoints at the default input size.
    for modality in [Modality::Image, Modality::Bev] {
        let cfg = AprConfig::default_for(modality);
        let model = AprModel::new(cfg.clone(), 3).unwrap();
        let channels = cfg.map_channels();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[channels, 256, 256]));
        let (f_q, f_x) = cnn::forward(&mut g, &model.params, "backbone.cnn", x);
        assert_eq!(g.value(f_q).shape, vec![40, 32, 32], "{modality} F_q");
        assert_eq!(g.value(f_x).shape, vec![112, 16, 16], "{modality} F_x");
    }

    // Point path: exactly 128 tokens, z-group 0 holds the 16 lowest
    // centroids.
    let cfg = AprConfig::default_for(Modality::Points);
    let model = AprModel::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud = random_cloud(&mut rng, 2 * cfg.points.input_points, 10.0);
    let sampled = sample_point_features(&cloud, cfg.points.input_points, 20.0, 0).unwrap();
    let input = ModelInput::from_points(&sampled, &cfg.points).unwrap();
    let ModelInput::Points(plan) = &input else {
        unreachable!()
    };
    assert_eq!(plan.centroids.len(), 128);
    let mut by_z: Vec<usize> = (0..plan.centroids.len()).collect();
    by_z.sort_by(|&a, &b| {
        plan.centroids[a][2]
            .partial_cmp(&plan.centroids[b][2])
            .unwrap()
    });
    let lowest: std::collections::HashSet<usize> = by_z[..16].iter().copied().collect();
    let group0: std::collections::HashSet<usize> = (0..128)
        .filter(|&t| plan.grid.z_group[t] == 0)
        .map(|t| plan.grid.perm[t])
        .collect();
    assert_eq!(group0, lowest, "z-group 0 must hold the 16 lowest centroids");
    let mut g = Graph::new();
    let vectors = points::forward(&mut g, &model.params, "backbone.pts", plan, &cfg.points);
    let tokens = points::grid_tokens(&mut g, &model.params, POS_BRANCH, vectors, &plan.grid);
    assert_eq!(g.value(tokens).shape, vec![128, cfg.d_model]);

    // Branch output is invariant under permuting the token rows
    // (encodings ride along: they were already added to the tokens).
    let d = 32;
    let n = 24;
    let mut reg = ParamRegistry::new();
    let mut prng = ChaCha8Rng::seed_from_u64(5);
    transformer::register_branch_params(&mut reg, &mut prng, "branch.t", d, 2, 64);
    let data: Vec<f64> = (0..n * d).map(|_| prng.gen_range(-1.0..1.0)).collect();
    let run = |rows: &[usize], reg: &ParamRegistry| -> Vec<f64> {
        let permuted: Vec<f64> = rows
            .iter()
            .flat_map(|&r| data[r * d..(r + 1) * d].to_vec())
            .collect();
        let mut g = Graph::new();
        let t = g.constant(Tensor::new(vec![n, d], permuted));
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let out = transformer::forward_branch(&mut g, reg, "branch.t", t, 2, 4, 0.0, false, &mut drng);
        g.value(out).data.clone()
    };
    let identity: Vec<usize> = (0..n).collect();
    let mut shuffled = identity.clone();
    for i in (1..n).rev() {
        shuffled.swap(i, prng.gen_range(0..=i));
    }
    let a = run(&identity, &reg);
    let b = run(&shuffled, &reg);
    let max_dev = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(max_dev < 1e-6, "permutation changed output by {max_dev:.3e}");

    println!(
        "PASS shape and structure: endpoints (40,32,32)/(112,16,16), 128 point tokens, z-group 0 lowest, permutation dev {max_dev:.3e} < 1e-6"
    );
}

fn train_setup(
    dir: &std::path::Path,
    frames: usize,
    seed: u64,
) -> (
    AprModel,
    Vec<TrainSample>,
    NormalizationStats,
    apr_core::data::DatasetManifest,
) {
    let world = SyntheticWorldConfig {
        seed,
        extent_m: 40.0,
        landmark_count: 500,
        frames,
        sensor_radius_m: 15.0,
        test_fraction: 0.0,
    };
    let paths = generate_dataset(&world, dir).unwrap();
    let manifest = load_manifest(&paths.train).unwrap();
    let cfg = AprConfig::reduced(Modality::Points);
    let model = AprModel::new(cfg.clone(), seed).unwrap();
    let positions: Vec<[f64; 3]> = manifest.records.iter().map(|r| r.pose.position).collect();
    let norm = apr_core::geometry::minmax_fit(&positions).unwrap();
    let pre = PreprocessConfig::default();
    let samples: Vec<TrainSample> = manifest
        .records
        .iter()
        .map(|r| {
            let input = load_input(&manifest, r, &cfg, &pre, None).unwrap().unwrap();
            let q = r.pose.orientation;
            TrainSample {
                input,
                position: minmax_apply(&norm, r.pose.position),
                orientation: [q.w, q.x, q.y, q.z],
            }
        })
        .collect();
    (model, samples, norm, manifest)
}

#[test]
fn criterion_determinism() {
    let _guard = heavy_lock();
    let dir = tempfile::tempdir().unwrap();
    let (_, samples, norm, manifest) = train_setup(dir.path(), 6, 21);
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    };

    let run = || {
        let mut model = AprModel::new(AprConfig::reduced(Modality::Points), 21).unwrap();
        fit(&mut model, &samples, &cfg, &norm, None).unwrap()
    };
    let (log_a, log_b) = (run(), run());
    assert!(log_a.batch_losses.len() >= 3);
    assert_eq!(
        log_a.batch_losses[..3],
        log_b.batch_losses[..3],
        "first three optimization steps diverged"
    );

    let model = AprModel::new(AprConfig::reduced(Modality::Points), 21).unwrap();
    let pre = PreprocessConfig::default();
    let ra = evaluate(&model, &norm, &manifest, &pre).unwrap();
    let rb = evaluate(&model, &norm, &manifest, &pre).unwrap();
    // Wall-clock timing is the one field allowed to differ.
    assert_eq!(ra.frames, rb.frames);
    assert_eq!(ra.skipped, rb.skipped);
    assert_eq!(ra.median_position_m, rb.median_position_m);
    assert_eq!(ra.median_orientation_deg, rb.median_orientation_deg);
    assert_eq!(ra.mean_position_m, rb.mean_position_m);
    assert_eq!(ra.mean_orientation_deg, rb.mean_orientation_deg);
    println!("PASS determinism: identical seeds reproduce first-3-step losses and eval reports");
}

#[test]
fn criterion_metric_oracle() {
    let pose = |p: [f64; 3]| Pose::new(p, Quat::IDENTITY).unwrap();
    let fixture = |pairs: &[([f64; 3], [f64; 3])]| -> (f64, f64) {
        let pos: Vec<f64> = pairs
            .iter()
            .map(|(gt, pr)| position_error(*gt, *pr))
            .collect();
        let ori: Vec<f64> = pairs
            .iter()
            .map(|(gt, pr)| {
                apr_core::geometry::quat_angular_distance(
                    &pose(*gt).orientation,
                    &pose(*pr).orientation,
                )
                .unwrap()
            })
            .collect();
        (median(&pos), median(&ori))
    };

    let perfect = fixture(&[([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), ([0.0; 3], [0.0; 3])]);
    assert_eq!(perfect, (0.0, 0.0));

    let offset = fixture(&[([0.0; 3], [1.0, 0.0, 0.0])]);
    assert_eq!(offset, (1.0, 0.0));

    assert_eq!(median(&[1.0, 3.0]), 2.0);
    println!("PASS metric oracle: (0 m, 0 deg), (1 m, 0 deg), median {{1,3}} = 2.0 exact");
}

#[test]
fn criterion_service_conformance() {
    let dir = tempfile::tempdir().unwrap();
    let world = SyntheticWorldConfig {
        seed: 29,
        extent_m: 40.0,
        landmark_count: 400,
        frames: 3,
        sensor_radius_m: 15.0,
        test_fraction: 0.0,
    };
    generate_dataset(&world, dir.path()).unwrap();
    let clouds: Vec<std::path::PathBuf> = (0..3)
        .map(|i| dir.path().join("clouds").join(format!("frame-{i:05}.bin")))
        .collect();

    let model = AprModel::new(AprConfig::reduced(Modality::Points), 13).unwrap();
    let norm = NormalizationStats::from_bounds([-20.0; 3], [20.0; 3]);
    let ckpt = dir.path().join("model.apr");
    save_checkpoint(&ckpt, &model, &norm).unwrap();
    let ckpt_bytes = std::fs::read(&ckpt).unwrap();

    let (model, norm) = load_checkpoint(&ckpt).unwrap();
    let svc = Arc::new(InitPoseService::new(
        model,
        norm,
        PreprocessConfig::default(),
        [0.25, 0.25, 0.25, 0.01, 0.01, 0.02],
    ));

    // Single-threaded oracle poses per payload.
    let oracle: Vec<InitPoseResponse> = clouds
        .iter()
        .map(|p| {
            let resp = svc.handle_request(&InitPoseRequest {
                id: "oracle".to_string(),
                modality: Modality::Points,
                path: Some(p.display().to_string()),
                data_b64: None,
            });
            assert_eq!(resp.status, "ok", "{:?}", resp.message);
            resp
        })
        .collect();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    {
        let svc = Arc::clone(&svc);
        std::thread::spawn(move || serve(listener, svc));
    }

    // Ping/pong and malformed-line recovery on one connection.
    {
        let mut stream = TcpStream::connect(addr).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut ask = |line: &str| -> String {
            stream.write_all(line.as_bytes()).unwrap();
            stream.write_all(b"\n").unwrap();
            let mut resp = String::new();
            reader.read_line(&mut resp).unwrap();
            resp.trim().to_string()
        };
        assert_eq!(ask("{\"ping\":true}"), "{\"pong\":true}");
        let err: InitPoseResponse = serde_json::from_str(&ask("{oops")).unwrap();
        assert_eq!(err.status, "error");
        let again = ask("{\"ping\":true}");
        assert_eq!(again, "{\"pong\":true}", "connection must survive junk");
    }

    // 8 concurrent clients, interleaved payload forms, id echo, pose
    // equivalence to the oracle within 1e-5.
    let handles: Vec<_> = (0..8)
        .map(|client| {
            let clouds = clouds.clone();
            let oracle = oracle.clone();
            std::thread::spawn(move || {
                let mut stream = TcpStream::connect(addr).unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                for round in 0..6 {
                    let which = (client + round) % clouds.len();
                    let id = format!("c{client}-r{round}");
                    let line = if round % 2 == 0 {
                        format!(
                            "{{\"id\":\"{id}\",\"modality\":\"points\",\"path\":\"{}\"}}",
                            clouds[which].display()
                        )
                    } else {
                        let bytes = std::fs::read(&clouds[which]).unwrap();
                        use base64::Engine;
                        let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
                        format!(
                            "{{\"id\":\"{id}\",\"modality\":\"points\",\"data_b64\":\"{b64}\"}}"
                        )
                    };
                    stream.write_all(line.as_bytes()).unwrap();
                    stream.write_all(b"\n").unwrap();
                    let mut resp = String::new();
                    reader.read_line(&mut resp).unwrap();
                    let resp: InitPoseResponse = serde_json::from_str(resp.trim()).unwrap();
                    assert_eq!(resp.status, "ok", "{:?}", resp.message);
                    assert_eq!(resp.id, id, "response id must echo the request");
                    let want = &oracle[which];
                    let (gp, wp) = (resp.position.unwrap(), want.position.unwrap());
                    let (gq, wq) = (resp.quaternion.unwrap(), want.quaternion.unwrap());
                    for d in 0..3 {
                        assert!((gp[d] - wp[d]).abs() < 1e-5, "position off under load");
                    }
                    for d in 0..4 {
                        assert!((gq[d] - wq[d]).abs() < 1e-5, "quaternion off under load");
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        ckpt_bytes,
        "checkpoint file changed during load test"
    );
    let resaved = dir.path().join("after.apr");
    save_checkpoint(&resaved, &svc.model, &svc.norm).unwrap();
    assert_eq!(
        std::fs::read(&resaved).unwrap(),
        ckpt_bytes,
        "served model parameters drifted"
    );
    println!(
        "PASS service conformance: ping/pong, malformed recovery, 8 clients x 6 requests within 1e-5, checkpoint bytes unchanged"
    );
}

#[test]
fn criterion_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // Point-cloud binary: write -> read -> write, bit-exact.
    let cloud = random_cloud(&mut rng, 257, 30.0);
    let c1 = dir.path().join("a.bin");
    let c2 = dir.path().join("b.bin");
    write_cloud(&cloud, &c1).unwrap();
    let reread = read_cloud(&c1).unwrap();
    write_cloud(&reread, &c2).unwrap();
    assert_eq!(
        std::fs::read(&c1).unwrap(),
        std::fs::read(&c2).unwrap(),
        "cloud bytes changed across a round trip"
    );

    // Checkpoint: save -> load -> save, bit-exact.
    let model = AprModel::new(AprConfig::reduced(Modality::Points), 23).unwrap();
    let norm = NormalizationStats::from_bounds([-1.0, 0.0, 2.0], [5.0, 9.0, 2.5]);
    let k1 = dir.path().join("a.apr");
    let k2 = dir.path().join("b.apr");
    save_checkpoint(&k1, &model, &norm).unwrap();
    let (loaded, lnorm) = load_checkpoint(&k1).unwrap();
    save_checkpoint(&k2, &loaded, &lnorm).unwrap();
    assert_eq!(
        std::fs::read(&k1).unwrap(),
        std::fs::read(&k2).unwrap(),
        "checkpoint bytes changed across a round trip"
    );

    // Manifest: load -> save -> load is a fixed point.
    let world = SyntheticWorldConfig {
        seed: 37,
        extent_m: 40.0,
        landmark_count: 300,
        frames: 4,
        sensor_radius_m: 15.0,
        test_fraction: 0.25,
    };
    let paths = generate_dataset(&world, dir.path()).unwrap();
    let m1 = load_manifest(&paths.train).unwrap();
    let saved = dir.path().join("resaved.csv");
    save_manifest(&m1, &saved).unwrap();
    let m2 = load_manifest(&saved).unwrap();
    assert_eq!(m1.records, m2.records);
    let saved_again = dir.path().join("resaved2.csv");
    save_manifest(&m2, &saved_again).unwrap();
    assert_eq!(
        std::fs::read(&saved).unwrap(),
        std::fs::read(&saved_again).unwrap(),
        "manifest text changed across a round trip"
    );
    println!("PASS format round trips: cloud and checkpoint bit-exact, manifest load/save fixed point");
}
