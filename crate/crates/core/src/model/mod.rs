//! Dual-branch pose regressor: a modality backbone feeds two transformer
//! branches, one regressing position from the deep feature map and one
//! regressing orientation from the shallower map (point clouds feed both
//! branches from the same vector set). Each branch decodes a single
//! learned query and ends in a two-layer head.

pub mod check;
pub mod cnn;
pub mod config;
pub mod points;
pub mod transformer;

pub use config::{AprConfig, CnnPlan, Modality, PointPlanConfig, SaPlan};
pub use check::{fixture_input, gradcheck_model};
pub use points::PointPlan;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, NodeId, ParamRegistry, Tensor};
use crate::error::Result;
use crate::image::NormalizedImage;
use crate::lidar::{BevHistogram, SampledPoints, BEV_SIZE};

pub const POS_BRANCH: &str = "branch.pos";
pub const ORI_BRANCH: &str = "branch.ori";
pub const POS_HEAD: &str = "head.pos";
pub const ORI_HEAD: &str = "head.ori";

/// One preprocessed sample in the form the model consumes.
#[derive(Debug, Clone)]
pub enum ModelInput {
    /// [3, s, s] normalized image tensor.
    Image(Tensor),
    /// [2, s, s] normalized occupancy histogram.
    Bev(Tensor),
    /// Precomputed point sampling plan.
    Points(Box<PointPlan>),
}

impl ModelInput {
    pub fn from_image(img: &NormalizedImage) -> ModelInput {
        ModelInput::Image(Tensor::new(
            vec![3, crate::image::IMAGE_SIZE, crate::image::IMAGE_SIZE],
            img.data.clone(),
        ))
    }

    pub fn from_bev(bev: &BevHistogram) -> ModelInput {
        ModelInput::Bev(Tensor::new(vec![2, BEV_SIZE, BEV_SIZE], bev.grid.clone()))
    }

    pub fn from_points(points: &SampledPoints, cfg: &PointPlanConfig) -> Result<ModelInput> {
        Ok(ModelInput::Points(Box::new(PointPlan::build(points, cfg)?)))
    }

    pub fn modality(&self) -> Modality {
        match self {
            ModelInput::Image(_) => Modality::Image,
            ModelInput::Bev(_) => Modality::Bev,
            ModelInput::Points(_) => Modality::Points,
        }
    }
}

/// Raw branch outputs for one sample, still in normalized position space
/// and with an unnormalized quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseOutput {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// Model parameters plus the configuration they were built for.
#[derive(Debug)]
pub struct AprModel {
    pub config: AprConfig,
    pub params: ParamRegistry,
}

impl AprModel {
    /// Initialize all parameters from the seed. The two loss temperatures
    /// live in the registry so checkpoints carry them.
    pub fn new(config: AprConfig, seed: u64) -> Result<AprModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        match config.modality {
            Modality::Image | Modality::Bev => {
                cnn::register_params(
                    &mut reg,
                    &mut rng,
                    "backbone.cnn",
                    config.map_channels(),
                    &config.cnn,
                );
                transformer::register_map_token_params(
                    &mut reg,
                    &mut rng,
                    POS_BRANCH,
                    config.cnn.stage4,
                    config.fx_side(),
                    config.fx_side(),
                    config.d_model,
                );
                transformer::register_map_token_params(
                    &mut reg,
                    &mut rng,
                    ORI_BRANCH,
                    config.cnn.stage2,
                    config.fq_side(),
                    config.fq_side(),
                    config.d_model,
                );
            }
            Modality::Points => {
                points::register_params(&mut reg, &mut rng, "backbone.pts", &config.points);
                points::register_token_params(
                    &mut reg,
                    &mut rng,
                    POS_BRANCH,
                    config.points.d_feat,
                    config.d_model,
                );
                points::register_token_params(
                    &mut reg,
                    &mut rng,
                    ORI_BRANCH,
                    config.points.d_feat,
                    config.d_model,
                );
            }
        }
        for branch in [POS_BRANCH, ORI_BRANCH] {
            transformer::register_branch_params(
                &mut reg,
                &mut rng,
                branch,
                config.d_model,
                config.layers,
                config.feedforward,
            );
        }
        transformer::register_head_params(&mut reg, &mut rng, POS_HEAD, config.d_model, 3);
        transformer::register_head_params(&mut reg, &mut rng, ORI_HEAD, config.d_model, 4);
        reg.insert("loss.s_x", Tensor::scalar(0.0));
        reg.insert("loss.s_q", Tensor::scalar(-3.0));
        reg.quantize_f32();
        Ok(AprModel { config, params: reg })
    }


    /// Build the forward graph for one sample. Returns the raw position
    /// ([1, 3]) and orientation ([1, 4]) output nodes.
    ///
    /// Panics if the input modality does not match the configuration;
    /// that is a wiring bug, not runtime data.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &ModelInput,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (NodeId, NodeId) {
        forward_with(&self.config, &self.params, g, input, train, rng)
    }

    /// Evaluation-mode forward pass reduced to plain numbers.
    pub fn predict(&self, input: &ModelInput) -> PoseOutput {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (pos, ori) = self.forward(&mut g, input, false, &mut rng);
        extract_pose(&g, pos, ori)
    }
}

/// `AprModel::forward` with the parameter registry passed explicitly, so
/// callers that perturb parameters between evaluations (the
/// finite-difference harness) rebuild the graph from the storage they
/// mutate. Returns the raw position ([1, 3]) and orientation ([1, 4])
/// output nodes.
///
/// Panics if the input modality does not match the configuration; that
/// is a wiring bug, not runtime data.
pub fn forward_with(
    cfg: &AprConfig,
    params: &ParamRegistry,
    g: &mut Graph,
    input: &ModelInput,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (NodeId, NodeId) {
    let (pos_tokens, ori_tokens) = match (cfg.modality, input) {
        (Modality::Image, ModelInput::Image(t)) | (Modality::Bev, ModelInput::Bev(t)) => {
            let want = vec![cfg.map_channels(), cfg.input_size, cfg.input_size];
            assert_eq!(t.shape, want, "input shape");
            let x = g.constant(t.clone());
            let (f_q, f_x) = cnn::forward(g, params, "backbone.cnn", x);
            let pos = transformer::tokens_from_map(g, params, POS_BRANCH, f_x);
            let ori = transformer::tokens_from_map(g, params, ORI_BRANCH, f_q);
            (pos, ori)
        }
        (Modality::Points, ModelInput::Points(plan)) => {
            let vectors = points::forward(g, params, "backbone.pts", plan, &cfg.points);
            let pos = points::grid_tokens(g, params, POS_BRANCH, vectors, &plan.grid);
            let ori = points::grid_tokens(g, params, ORI_BRANCH, vectors, &plan.grid);
            (pos, ori)
        }
        (configured, got) => panic!(
            "model configured for {configured} received {} input",
            got.modality()
        ),
    };
    let pos_vec = transformer::forward_branch(
        g,
        params,
        POS_BRANCH,
        pos_tokens,
        cfg.layers,
        cfg.heads,
        cfg.dropout,
        train,
        rng,
    );
    let ori_vec = transformer::forward_branch(
        g,
        params,
        ORI_BRANCH,
        ori_tokens,
        cfg.layers,
        cfg.heads,
        cfg.dropout,
        train,
        rng,
    );
    let pos = transformer::mlp_head(g, params, POS_HEAD, pos_vec);
    let ori = transformer::mlp_head(g, params, ORI_HEAD, ori_vec);
    (pos, ori)
}

/// Read the two head outputs out of an evaluated graph.
pub fn extract_pose(g: &Graph, pos: NodeId, ori: NodeId) -> PoseOutput {
    let p = g.value(pos);
    let q = g.value(ori);
    assert_eq!(p.shape, vec![1, 3]);
    assert_eq!(q.shape, vec![1, 4]);
    PoseOutput {
        position: [p.data[0], p.data[1], p.data[2]],
        orientation: [q.data[0], q.data[1], q.data[2], q.data[3]],
    }
}
