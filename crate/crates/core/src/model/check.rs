//! Whole-model gradient verification: one forward pass plus the pose
//! loss, differentiated with respect to every registered parameter and
//! compared against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{finite_difference_check, FdReport, Graph, Tensor, FD_EPSILON};
use crate::error::Result;
use crate::lidar::{sample_point_features, PointCloud};
use crate::train::pose_loss_graph;

use super::{forward_with, AprConfig, AprModel, Modality, ModelInput};

/// Deterministic pseudo-random input matching the configured modality
/// and sizes.
pub fn fixture_input(cfg: &AprConfig, seed: u64) -> Result<ModelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cfg.modality {
        Modality::Image => {
            let s = cfg.input_size;
            let data: Vec<f64> = (0..3 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
            Ok(ModelInput::Image(Tensor::new(vec![3, s, s], data)))
        }
        Modality::Bev => {
            let s = cfg.input_size;
            let data: Vec<f64> = (0..2 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
            Ok(ModelInput::Bev(Tensor::new(vec![2, s, s], data)))
        }
        Modality::Points => {
            let cloud = PointCloud::new(
                (0..2 * cfg.points.input_points)
                    .map(|_| {
                        [
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-2.0..5.0),
                            rng.gen_range(0.0..1.0),
                        ]
                    })
                    .collect(),
            )?;
            let sampled =
                sample_point_features(&cloud, cfg.points.input_points, 20.0, seed)?;
            ModelInput::from_points(&sampled, &cfg.points)
        }
    }
}

/// Run the finite-difference suite over the full model: every parameter
/// tensor is visited, sampling `coords_per_tensor` coordinates in each
/// (None checks all coordinates). The scalar under test is the combined
/// pose loss on a fixed input and target, evaluation mode.
pub fn gradcheck_model(
    cfg: &AprConfig,
    coords_per_tensor: Option<usize>,
    seed: u64,
) -> Result<FdReport> {
    let mut model = AprModel::new(cfg.clone(), seed)?;
    let input = fixture_input(cfg, seed.wrapping_add(1))?;
    let target_pos = [0.25, -0.4, 0.6];
    let target_ori = [0.5, 0.5, 0.5, 0.5];
    let config = model.config.clone();
    let report = finite_difference_check(
        &mut model.params,
        FD_EPSILON,
        coords_per_tensor,
        seed,
        |reg, accumulate| {
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (pos, ori) = forward_with(&config, reg, &mut g, &input, false, &mut rng);
            let nodes = pose_loss_graph(&mut g, reg, pos, ori, target_pos, target_ori);
            let loss = g.value(nodes.l_pose).data[0];
            if accumulate {
                g.backward(nodes.l_pose, reg);
            }
            loss
        },
    );
    Ok(report)
}
