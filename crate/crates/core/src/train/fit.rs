//! Training loop: seeded shuffling, per-sample graphs whose losses are
//! scaled in-graph so gradients accumulate to the batch mean, Adam under
//! a step schedule, per-epoch statistics, and checkpoint cadence.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Graph;
use crate::error::{AprError, Result};
use crate::geometry::NormalizationStats;
use crate::model::{AprModel, ModelInput};

use super::checkpoint::save_checkpoint;
use super::loss::pose_loss_graph;
use super::optim::{step_lr, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs between learning-rate halvings.
    pub lr_period: usize,
    pub lr_factor: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only the final
    /// checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            epochs: 300,
            lr_period: 50,
            lr_factor: 0.5,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr_period == 0 {
            return Err(AprError::Config(
                "batch_size, epochs, and lr_period must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(AprError::Config(
                "learning_rate must be > 0 and weight_decay >= 0".into(),
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(AprError::Config(format!(
                "lr_factor {} not in (0, 1]",
                self.lr_factor
            )));
        }
        Ok(())
    }
}

/// One training sample: preprocessed input plus normalized-space targets.
/// The orientation target must be a canonicalized unit quaternion.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: ModelInput,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_p: f64,
    pub l_o: f64,
    pub l_pose: f64,
    pub s_x: f64,
    pub s_q: f64,
    pub lr: f64,
}

/// Everything fit reports back: per-epoch means and the batch-mean loss
/// of every optimizer step in order.
#[derive(Debug, Clone, Default)]
pub struct FitLog {
    pub epochs: Vec<EpochStats>,
    pub batch_losses: Vec<f64>,
}

/// Train the model in place. Checkpoints (when `out_dir` is given) are
/// written at the configured cadence as checkpoint-NNNN.apr plus a final
/// checkpoint-final.apr.
pub fn fit(
    model: &mut AprModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    norm: &NormalizationStats,
    out_dir: Option<&Path>,
) -> Result<FitLog> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(AprError::domain("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.weight_decay);
    let mut log = FitLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = step_lr(epoch, cfg.learning_rate, cfg.lr_period, cfg.lr_factor);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut sum_p = 0.0;
        let mut sum_o = 0.0;
        let mut sum_pose = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.params.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            let mut batch_pose = 0.0;
            for &i in batch {
                let sample = &samples[i];
                let mut g = Graph::new();
                let (pos, ori) = model.forward(&mut g, &sample.input, true, &mut rng);
                let nodes =
                    pose_loss_graph(&mut g, &model.params, pos, ori, sample.position, sample.orientation);
                let l_pose = g.scalar_value(nodes.l_pose);
                if !l_pose.is_finite() {
                    return Err(AprError::domain(format!(
                        "non-finite loss at epoch {epoch} on sample {i}"
                    )));
                }
                sum_p += g.scalar_value(nodes.l_p);
                sum_o += g.scalar_value(nodes.l_o);
                sum_pose += l_pose;
                batch_pose += l_pose * inv;
                let scaled = g.scale(nodes.l_pose, inv);
                g.backward(scaled, &mut model.params);
            }
            if let Some(name) = model.params.first_non_finite() {
                return Err(AprError::domain(format!(
                    "non-finite value in {name} at epoch {epoch}"
                )));
            }
            adam.step(&mut model.params, lr);
            log.batch_losses.push(batch_pose);
        }

        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            l_p: sum_p / n,
            l_o: sum_o / n,
            l_pose: sum_pose / n,
            s_x: model.params.get("loss.s_x").unwrap().data[0],
            s_q: model.params.get("loss.s_q").unwrap().data[0],
            lr,
        };
        log::info!(
            "epoch {:>4}: L_p {:.6} L_o {:.6} L_pose {:.6} s_x {:.4} s_q {:.4} lr {:.2e}",
            stats.epoch,
            stats.l_p,
            stats.l_o,
            stats.l_pose,
            stats.s_x,
            stats.s_q,
            stats.lr
        );
        log.epochs.push(stats);

        if let Some(dir) = out_dir {
            let completed = epoch + 1;
            if cfg.checkpoint_every > 0 && completed % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("checkpoint-{completed:04}.apr")), model, norm)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoint-final.apr"), model, norm)?;
    }
    Ok(log)
}
