//! Turns manifest records into model inputs by running the modality's
//! preprocessing chain on the referenced payload files.

use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};
use crate::image::{parse_ppm, preprocess_image, read_ppm, AugmentConfig};
use crate::lidar::{
    bev_histogram, parse_cloud, read_cloud, sample_point_features, BevConfig,
    DEFAULT_CROP_RADIUS_M,
};
use crate::model::{AprConfig, Modality, ModelInput};

use super::manifest::{DatasetManifest, ManifestRecord};

/// Preprocessing knobs shared by training, evaluation, and serving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Radius crop applied before point sampling, meters.
    pub crop_radius_m: f64,
    pub bev: BevConfig,
    pub augment: AugmentConfig,
    /// Seed for farthest-point-sampling start selection and padding.
    pub sample_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop_radius_m: DEFAULT_CROP_RADIUS_M,
            bev: BevConfig::default(),
            augment: AugmentConfig::default(),
            sample_seed: 0,
        }
    }
}

/// Load and preprocess the payload the configured modality needs.
/// Returns None when the record has no payload cell for that modality.
/// `augment_seed` enables train-time color jitter (subject to the
/// augment config's own enabled flag); evaluation passes None.
pub fn load_input(
    manifest: &DatasetManifest,
    record: &ManifestRecord,
    model_cfg: &AprConfig,
    pre: &PreprocessConfig,
    augment_seed: Option<u64>,
) -> Result<Option<ModelInput>> {
    match model_cfg.modality {
        Modality::Image => {
            let Some(rel) = &record.image else {
                return Ok(None);
            };
            let raw = read_ppm(&manifest.resolve(rel))?;
            let jitter = augment_seed.map(|s| (&pre.augment, s));
            let img = preprocess_image(&raw, jitter)?;
            Ok(Some(ModelInput::from_image(&img)))
        }
        Modality::Bev => {
            let Some(rel) = &record.cloud else {
                return Ok(None);
            };
            let cloud = read_cloud(&manifest.resolve(rel))?;
            let bev = bev_histogram(&cloud, &pre.bev)?;
            Ok(Some(ModelInput::from_bev(&bev)))
        }
        Modality::Points => {
            let Some(rel) = &record.cloud else {
                return Ok(None);
            };
            let cloud = read_cloud(&manifest.resolve(rel))?;
            let sampled = sample_point_features(
                &cloud,
                model_cfg.points.input_points,
                pre.crop_radius_m,
                pre.sample_seed,
            )?;
            Ok(Some(ModelInput::from_points(&sampled, &model_cfg.points)?))
        }
    }
}

/// Build a model input from raw payload bytes in the modality's file
/// format: PPM for images, the binary cloud format for BEV and points.
/// Augmentation never applies here; this is the inference-side path.
pub fn input_from_bytes(
    bytes: &[u8],
    model_cfg: &AprConfig,
    pre: &PreprocessConfig,
) -> Result<ModelInput> {
    match model_cfg.modality {
        Modality::Image => {
            let raw = parse_ppm(bytes).map_err(AprError::domain)?;
            let img = preprocess_image(&raw, None)?;
            Ok(ModelInput::from_image(&img))
        }
        Modality::Bev => {
            let cloud = parse_cloud(bytes).map_err(AprError::domain)?;
            let bev = bev_histogram(&cloud, &pre.bev)?;
            Ok(ModelInput::from_bev(&bev))
        }
        Modality::Points => {
            let cloud = parse_cloud(bytes).map_err(AprError::domain)?;
            let sampled = sample_point_features(
                &cloud,
                model_cfg.points.input_points,
                pre.crop_radius_m,
                pre.sample_seed,
            )?;
            ModelInput::from_points(&sampled, &model_cfg.points)
        }
    }
}
