//! Benchmark metrics (median/mean position and orientation error) plus
//! trajectory artifacts: a per-frame CSV and an overlay SVG of the ground
//! truth (red) and predicted (blue) paths.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::data::{load_input, DatasetManifest, PreprocessConfig};
use crate::error::{AprError, Result};
use crate::geometry::{
    minmax_invert, position_error, quat_angular_distance, NormalizationStats, Pose, Quat,
};
use crate::model::{AprModel, PoseOutput};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameEval {
    pub frame: String,
    pub gt: Pose,
    pub pred: Pose,
    pub pos_err_m: f64,
    pub orient_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameEval>,
    /// Frames excluded because the modality's payload cell was empty.
    pub skipped: Vec<String>,
    pub median_position_m: f64,
    pub mean_position_m: f64,
    pub median_orientation_deg: f64,
    pub mean_orientation_deg: f64,
    pub mean_inference_ms: f64,
}

/// Median with the even-length rule: mean of the two central values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty series");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Map raw model output into a world pose: denormalize the position and
/// normalize + canonicalize the quaternion.
pub fn to_world_pose(out: &PoseOutput, norm: &NormalizationStats) -> Result<Pose> {
    let position = minmax_invert(norm, out.position);
    let [w, x, y, z] = out.orientation;
    Pose::new(position, Quat::new(w, x, y, z))
}

/// Run inference over every manifest record and aggregate the error
/// metrics. Frames whose payload cell is empty are excluded and counted.
pub fn evaluate(
    model: &AprModel,
    norm: &NormalizationStats,
    manifest: &DatasetManifest,
    pre: &PreprocessConfig,
) -> Result<EvalReport> {
    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    let mut inference_s = 0.0;
    for record in &manifest.records {
        let Some(input) = load_input(manifest, record, &model.config, pre, None)? else {
            skipped.push(record.frame.clone());
            continue;
        };
        let start = Instant::now();
        let out = model.predict(&input);
        inference_s += start.elapsed().as_secs_f64();
        let pred = to_world_pose(&out, norm)?;
        let pos_err_m = position_error(record.pose.position, pred.position);
        let orient_err_deg = quat_angular_distance(&record.pose.orientation, &pred.orientation)?;
        frames.push(FrameEval {
            frame: record.frame.clone(),
            gt: record.pose,
            pred,
            pos_err_m,
            orient_err_deg,
        });
    }
    if frames.is_empty() {
        return Err(AprError::domain(
            "no evaluable frames (all payloads missing)",
        ));
    }
    if !skipped.is_empty() {
        log::warn!("excluded {} frames with missing payloads", skipped.len());
    }
    let pos: Vec<f64> = frames.iter().map(|f| f.pos_err_m).collect();
    let ori: Vec<f64> = frames.iter().map(|f| f.orient_err_deg).collect();
    let n = frames.len() as f64;
    Ok(EvalReport {
        median_position_m: median(&pos),
        mean_position_m: pos.iter().sum::<f64>() / n,
        median_orientation_deg: median(&ori),
        mean_orientation_deg: ori.iter().sum::<f64>() / n,
        mean_inference_ms: inference_s / n * 1e3,
        frames,
        skipped,
    })
}

/// Write `base.csv` and `base.svg` trajectory artifacts. Returns both
/// paths.
pub fn export_trajectory(report: &EvalReport, base: &Path) -> Result<(PathBuf, PathBuf)> {
    if report.frames.is_empty() {
        return Err(AprError::domain("cannot export an empty report"));
    }
    let csv_path = base.with_extension("csv");
    let svg_path = base.with_extension("svg");

    let mut csv = String::from("frame,gt_x,gt_y,pred_x,pred_y,pos_err_m,orient_err_deg\n");
    for f in &report.frames {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.frame,
            f.gt.position[0],
            f.gt.position[1],
            f.pred.position[0],
            f.pred.position[1],
            f.pos_err_m,
            f.orient_err_deg,
        ));
    }
    std::fs::write(&csv_path, csv).map_err(|e| AprError::io(&csv_path, e))?;
    std::fs::write(&svg_path, trajectory_svg(report)).map_err(|e| AprError::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

fn trajectory_svg(report: &EvalReport) -> String {
    const SIZE: f64 = 640.0;
    const MARGIN: f64 = 70.0;

    let bound = |axis: usize| -> (f64, f64) {
        let v: Vec<f64> = report
            .frames
            .iter()
            .flat_map(|f| [f.gt.position[axis], f.pred.position[axis]])
            .collect();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (min_x, max_x) = bound(0);
    let (min_y, max_y) = bound(1);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - min_x) / (max_x - min_x) * span;
    // SVG y grows downward; world y grows upward.
    let py = |y: f64| SIZE - MARGIN - (y - min_y) / (max_y - min_y) * span;

    let polyline = |pick: &dyn Fn(&FrameEval) -> [f64; 3], color: &str| -> String {
        let pts: Vec<String> = report
            .frames
            .iter()
            .map(|f| {
                let p = pick(f);
                format!("{:.2},{:.2}", px(p[0]), py(p[1]))
            })
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SIZE} {SIZE}\" width=\"{SIZE}\" height=\"{SIZE}\">"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{m}\" y2=\"{t}\" stroke=\"black\"/>",
        m = MARGIN,
        b = SIZE - MARGIN,
        r = SIZE - MARGIN,
        t = MARGIN,
    ));
    svg.push_str(&polyline(&|f| f.gt.position, "red"));
    svg.push_str(&polyline(&|f| f.pred.position, "blue"));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">x (m)</text>",
        SIZE / 2.0,
        SIZE - MARGIN / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 {x} {y})\">y (m)</text>",
        x = MARGIN / 3.0,
        y = SIZE / 2.0
    ));
    for (value, x, y, anchor) in [
        (min_x, px(min_x), SIZE - MARGIN + 20.0, "middle"),
        (max_x, px(max_x), SIZE - MARGIN + 20.0, "middle"),
        (min_y, MARGIN - 8.0, py(min_y) + 4.0, "end"),
        (max_y, MARGIN - 8.0, py(max_y) + 4.0, "end"),
    ] {
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"12\" text-anchor=\"{anchor}\">{value:.1}</text>"
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"13\" fill=\"red\">ground truth</text>\
         <text x=\"{x}\" y=\"{y2}\" font-size=\"13\" fill=\"blue\">prediction</text>",
        x = SIZE - MARGIN - 110.0,
        y = MARGIN + 18.0,
        y2 = MARGIN + 36.0,
    ));
    svg.push_str("</svg>");
    svg
}
