//! Seeded synthetic world: uniform landmarks in a box, a smooth closed
//! trajectory through them, and per-frame sensor payloads whose content
//! is a deterministic function of the pose, so pose is recoverable from
//! the payloads and desk-scale convergence tests have signal to fit.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};
use crate::geometry::{Pose, Quat};
use crate::image::{write_ppm, RawImage, IMAGE_SIZE};
use crate::lidar::{write_cloud, PointCloud};

use super::manifest::{save_manifest, DatasetManifest, ManifestRecord};

/// Landmark z values span this band in meters.
const LANDMARK_Z_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    /// Side length of the square world box, meters.
    pub extent_m: f64,
    pub landmark_count: usize,
    /// Trajectory length in frames.
    pub frames: usize,
    pub sensor_radius_m: f64,
    /// Trailing fraction of the trajectory written to the test manifest.
    /// Zero keeps every frame in the train split.
    pub test_fraction: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            seed: 0,
            extent_m: 100.0,
            landmark_count: 2000,
            frames: 64,
            sensor_radius_m: 20.0,
            test_fraction: 0.25,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extent_m <= 0.0 || self.sensor_radius_m <= 0.0 {
            return Err(AprError::Config(
                "extent_m and sensor_radius_m must be positive".into(),
            ));
        }
        if self.landmark_count == 0 || self.frames == 0 {
            return Err(AprError::Config(
                "landmark_count and frames must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(AprError::Config(format!(
                "test_fraction {} not in [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: [f64; 3],
    pub intensity: f64,
}

/// Place landmarks uniformly in the world box, deterministically per seed.
pub fn synth_world(cfg: &SyntheticWorldConfig) -> Result<Vec<Landmark>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.extent_m / 2.0;
    Ok((0..cfg.landmark_count)
        .map(|_| Landmark {
            position: [
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                rng.gen_range(0.0..LANDMARK_Z_MAX),
            ],
            intensity: rng.gen_range(0.0..1.0),
        })
        .collect())
}

/// Smooth closed trajectory inside the box: a Lissajous figure with yaw
/// tracking the travel direction and a gentle height swell. The seed only
/// shifts the starting phase.
pub fn synth_trajectory(cfg: &SyntheticWorldConfig) -> Result<Vec<Pose>> {
    cfg.validate()?;
    let phase = (cfg.seed % 997) as f64 / 997.0 * std::f64::consts::TAU;
    let amp = 0.35 * cfg.extent_m;
    let tau = std::f64::consts::TAU;
    let xy = |t: f64| -> ([f64; 2], [f64; 2]) {
        let p = [
            amp * (tau * t + phase).sin(),
            amp * (2.0 * tau * t + 0.4 + phase).sin(),
        ];
        let v = [
            amp * tau * (tau * t + phase).cos(),
            amp * 2.0 * tau * (2.0 * tau * t + 0.4 + phase).cos(),
        ];
        (p, v)
    };
    let mut poses = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let t = i as f64 / cfg.frames as f64;
        let (p, v) = xy(t);
        let z = 1.5 + 0.5 * (3.0 * tau * t).sin();
        let yaw = v[1].atan2(v[0]);
        let pitch = 0.05 * (2.0 * tau * t).sin();
        let roll = 0.03 * (tau * t).cos();
        poses.push(Pose::new(
            [p[0], p[1], z],
            Quat::from_yaw_pitch_roll(yaw, pitch, roll),
        )?);
    }
    Ok(poses)
}

fn splat(img: &mut RawImage, ego: [f64; 3], intensity: f64, radius: f64) {
    let to_pixel = |v: f64| -> usize {
        let u = (v + radius) / (2.0 * radius) * IMAGE_SIZE as f64;
        (u.floor() as isize).clamp(0, IMAGE_SIZE as isize - 1) as usize
    };
    let col = to_pixel(ego[0]);
    let row = to_pixel(ego[1]);
    let height = (((ego[2] + radius) / (2.0 * radius)) * 255.0).clamp(0.0, 255.0) as u8;
    let bright = (intensity * 255.0).clamp(0.0, 255.0) as u8;
    // Max for height and intensity, saturating count for density; all
    // three are insensitive to landmark order.
    img.set(col, row, 0, img.get(col, row, 0).max(height));
    img.set(col, row, 1, img.get(col, row, 1).max(bright));
    img.set(col, row, 2, img.get(col, row, 2).saturating_add(32));
}

/// Render one frame: the in-radius landmarks in the ego frame as a point
/// cloud, plus a top-down pseudo-image (channels: height, intensity,
/// density).
pub fn synth_sample(
    world: &[Landmark],
    pose: &Pose,
    sensor_radius_m: f64,
) -> Result<(PointCloud, RawImage)> {
    let r2 = sensor_radius_m * sensor_radius_m;
    let mut rows = Vec::new();
    let mut img = RawImage::constant(IMAGE_SIZE, IMAGE_SIZE, [0, 0, 0])?;
    for lm in world {
        let p = pose.transform_inverse(lm.position);
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r2 {
            rows.push([p[0], p[1], p[2], lm.intensity]);
            splat(&mut img, p, lm.intensity, sensor_radius_m);
        }
    }
    Ok((PointCloud::new(rows)?, img))
}

/// Manifests produced by dataset generation.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Generate payload files plus train/test manifests under `dir`. The test
/// split is the trailing contiguous segment of the trajectory, so the two
/// splits share no frame ids.
pub fn generate_dataset(cfg: &SyntheticWorldConfig, dir: &Path) -> Result<DatasetPaths> {
    let world = synth_world(cfg)?;
    let poses = synth_trajectory(cfg)?;
    let clouds_dir = dir.join("clouds");
    let images_dir = dir.join("images");
    for d in [&clouds_dir, &images_dir] {
        std::fs::create_dir_all(d).map_err(|e| AprError::io(d, e))?;
    }

    let mut records = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let (cloud, image) = synth_sample(&world, pose, cfg.sensor_radius_m)?;
        let cloud_rel = PathBuf::from(format!("clouds/frame-{i:05}.bin"));
        let image_rel = PathBuf::from(format!("images/frame-{i:05}.ppm"));
        write_cloud(&cloud, &dir.join(&cloud_rel))?;
        write_ppm(&image, &dir.join(&image_rel))?;
        records.push(ManifestRecord {
            frame: format!("{i:05}"),
            pose: *pose,
            image: Some(image_rel),
            cloud: Some(cloud_rel),
        });
    }

    let n_test = if cfg.test_fraction == 0.0 {
        0
    } else {
        ((poses.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, poses.len() - 1)
    };
    let split = records.len() - n_test;
    let manifest = |recs: &[ManifestRecord]| DatasetManifest {
        root: dir.to_path_buf(),
        records: recs.to_vec(),
    };
    let paths = DatasetPaths {
        train: dir.join("train.csv"),
        test: dir.join("test.csv"),
    };
    save_manifest(&manifest(&records[..split]), &paths.train)?;
    save_manifest(&manifest(&records[split..]), &paths.test)?;
    Ok(paths)
}
