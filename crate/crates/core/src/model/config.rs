//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};

/// Input sensor representation the model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Bev,
    Points,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Modality::Image => "image",
            Modality::Bev => "bev",
            Modality::Points => "points",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Modality {
    type Err = AprError;
    fn from_str(s: &str) -> Result<Modality> {
        match s {
            "image" => Ok(Modality::Image),
            "bev" => Ok(Modality::Bev),
            "points" => Ok(Modality::Points),
            other => Err(AprError::Config(format!(
                "unknown modality {other:?} (expected image, bev, or points)"
            ))),
        }
    }
}

/// Channel plan for the convolutional backbone stages. Stages run at
/// strides 2,2,2,2,1; stage 2 output (input/8 square) feeds the
/// orientation branch, stage 4 output (input/16 square) the position
/// branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnPlan {
    pub stem: usize,
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
    pub stage4: usize,
}

impl Default for CnnPlan {
    fn default() -> Self {
        CnnPlan {
            stem: 16,
            stage1: 24,
            stage2: 40,
            stage3: 80,
            stage4: 112,
        }
    }
}

/// One set-abstraction stage of the point backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaPlan {
    /// Centroid count selected by farthest point sampling.
    pub centroids: usize,
    /// Neighbors pooled per centroid.
    pub neighbors: usize,
    /// Ball radius in normalized coordinate units.
    pub radius: f64,
    /// Per-point MLP widths.
    pub mlp: Vec<usize>,
}

impl Default for SaPlan {
    fn default() -> Self {
        SaPlan {
            centroids: 512,
            neighbors: 16,
            radius: 0.2,
            mlp: vec![32, 64],
        }
    }
}

/// Point backbone plan: two set-abstraction stages and one
/// feature-propagation stage emitting `centroid_count x d_feat` vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointPlanConfig {
    pub input_points: usize,
    pub sa1: SaPlan,
    pub sa2: SaPlan,
    /// Output feature width per vector.
    pub d_feat: usize,
}

impl Default for PointPlanConfig {
    fn default() -> Self {
        PointPlanConfig {
            input_points: 4096,
            sa1: SaPlan::default(),
            sa2: SaPlan {
                centroids: 128,
                neighbors: 16,
                radius: 0.4,
                mlp: vec![64, 128],
            },
            d_feat: 128,
        }
    }
}

/// Full model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AprConfig {
    pub modality: Modality,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub feedforward: usize,
    pub dropout: f64,
    /// Side length of the square map fed to the convolutional backbone.
    pub input_size: usize,
    pub cnn: CnnPlan,
    pub points: PointPlanConfig,
}

impl Default for AprConfig {
    fn default() -> Self {
        AprConfig {
            modality: Modality::Points,
            d_model: 128,
            heads: 4,
            layers: 6,
            feedforward: 256,
            dropout: 0.1,
            input_size: 256,
            cnn: CnnPlan::default(),
            points: PointPlanConfig::default(),
        }
    }
}

impl AprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(AprError::Config(format!(
                "layers must be >= 1, got {}",
                self.layers
            )));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(AprError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        // Learned encodings split the width: half/half over rows and
        // columns for maps, half/quarter/quarter over z/x/y for points.
        if self.d_model % 4 != 0 {
            return Err(AprError::Config(format!(
                "d_model {} must be divisible by 4 for the encoding split",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AprError::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.feedforward == 0 {
            return Err(AprError::Config("feedforward width must be > 0".into()));
        }
        if self.input_size < 16 || self.input_size % 16 != 0 {
            return Err(AprError::Config(format!(
                "input_size {} must be a multiple of 16 (four stride-2 stages)",
                self.input_size
            )));
        }
        for (name, sa) in [("sa1", &self.points.sa1), ("sa2", &self.points.sa2)] {
            if sa.centroids == 0 || sa.neighbors == 0 || sa.mlp.is_empty() || sa.radius <= 0.0 {
                return Err(AprError::Config(format!(
                    "{name} stage needs positive centroids/neighbors/radius and a non-empty mlp"
                )));
            }
        }
        if self.points.sa1.centroids > self.points.input_points
            || self.points.sa2.centroids > self.points.sa1.centroids
        {
            return Err(AprError::Config(format!(
                "set-abstraction sizes must shrink: {} -> {} -> {}",
                self.points.input_points, self.points.sa1.centroids, self.points.sa2.centroids
            )));
        }
        Ok(())
    }

    /// Input channel count of the convolutional backbone.
    pub fn map_channels(&self) -> usize {
        match self.modality {
            Modality::Image => 3,
            Modality::Bev => 2,
            Modality::Points => 0,
        }
    }

    /// Side length of the orientation-branch feature map.
    pub fn fq_side(&self) -> usize {
        self.input_size / 8
    }

    /// Side length of the position-branch feature map.
    pub fn fx_side(&self) -> usize {
        self.input_size / 16
    }

    /// Default configuration with the modality swapped in.
    pub fn default_for(modality: Modality) -> AprConfig {
        AprConfig {
            modality,
            ..AprConfig::default()
        }
    }

    /// Reduced configuration for finite-difference runs: same wiring,
    /// small widths and maps.
    pub fn reduced(modality: Modality) -> AprConfig {
        AprConfig {
            modality,
            d_model: 16,
            heads: 4,
            layers: 2,
            feedforward: 32,
            dropout: 0.0,
            input_size: 64,
            cnn: CnnPlan {
                stem: 4,
                stage1: 6,
                stage2: 8,
                stage3: 10,
                stage4: 12,
            },
            points: PointPlanConfig {
                input_points: 256,
                sa1: SaPlan {
                    centroids: 64,
                    neighbors: 8,
                    radius: 0.3,
                    mlp: vec![8, 16],
                },
                sa2: SaPlan {
                    centroids: 32,
                    neighbors: 8,
                    radius: 0.5,
                    mlp: vec![16, 16],
                },
                d_feat: 16,
            },
        }
    }
}
