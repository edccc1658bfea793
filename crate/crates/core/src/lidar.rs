//! LiDAR preprocessing: radius crop, farthest point sampling, point feature
//! construction, and BEV 2-bin histogram rasterization.
//!
//! Coordinates are ego-frame meters: x forward, y left, z up. Point cloud
//! files store little-endian f32 (x, y, z, intensity) records; in memory the
//! rows are f64 so repeated transforms do not lose precision.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};

pub const BEV_SIZE: usize = 256;
pub const POINT_SAMPLE_COUNT: usize = 4096;
pub const DEFAULT_CROP_RADIUS_M: f64 = 20.0;

/// Point cloud with intensity, rows of (x, y, z, intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 4]>) -> Result<PointCloud> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(AprError::Domain(format!(
                    "point {i} has non-finite components: {p:?}"
                )));
            }
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let p = self.points[i];
        [p[0], p[1], p[2]]
    }
}

/// Keep exactly the points within Euclidean distance r of the origin,
/// preserving order. Idempotent.
pub fn crop_radius(cloud: &PointCloud, r: f64) -> Result<PointCloud> {
    if r <= 0.0 {
        return Err(AprError::Domain(format!("crop radius must be > 0, got {r}")));
    }
    let r2 = r * r;
    let points = cloud
        .points
        .iter()
        .filter(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r2)
        .copied()
        .collect();
    Ok(PointCloud { points })
}

/// Tie handling when several candidates share the maximal min-distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsTieBreak {
    /// Pick the lowest index. Default for preprocessing.
    LowestIndex,
    /// Pick the lexicographically smallest (x, y, z), then lowest index.
    /// Keeps the selected point multiset stable under input permutation.
    LexCoords,
}

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn lex_less(a: [f64; 3], b: [f64; 3]) -> bool {
    for d in 0..3 {
        if a[d] < b[d] {
            return true;
        }
        if a[d] > b[d] {
            return false;
        }
    }
    false
}

/// Greedy farthest point sampling from a fixed start index.
///
/// Each pick maximizes the minimum distance to the already-picked set.
/// Requires 1 <= k <= points.len().
pub fn fps_greedy(xyz: &[[f64; 3]], k: usize, start: usize, tie: FpsTieBreak) -> Vec<usize> {
    assert!(!xyz.is_empty() && k >= 1 && k <= xyz.len() && start < xyz.len());
    let n = xyz.len();
    let mut picked = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start;
    picked.push(current);
    taken[current] = true;
    for _ in 1..k {
        let last = xyz[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = d2(xyz[i], last);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    min_d2[i] > min_d2[b]
                        || (min_d2[i] == min_d2[b]
                            && tie == FpsTieBreak::LexCoords
                            && lex_less(xyz[i], xyz[b]))
                }
            };
            if better {
                best = Some(i);
            }
        }
        current = best.expect("k <= n leaves a candidate");
        picked.push(current);
        taken[current] = true;
    }
    picked
}

/// Farthest point sampling with a seeded start.
///
/// The start index is a seeded draw; subsequent picks are greedy with
/// lowest-index tie-breaks. When the cloud has fewer than k points, every
/// point is selected once (a full FPS permutation) and the remainder is
/// padded by seeded draws with replacement.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(AprError::domain("cannot sample from an empty point cloud"));
    }
    if k == 0 {
        return Err(AprError::domain("sample count must be >= 1"));
    }
    let n = cloud.len();
    let xyz: Vec<[f64; 3]> = (0..n).map(|i| cloud.xyz(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..n);
    let mut indices = fps_greedy(&xyz, k.min(n), start, FpsTieBreak::LowestIndex);
    while indices.len() < k {
        indices.push(rng.gen_range(0..n));
    }
    Ok(indices)
}

/// Sampled point features: rows of 6 columns, absolute then relative
/// coordinates, all within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPoints {
    pub features: Vec<[f64; 6]>,
}

/// Build per-point features for the selected indices.
///
/// Columns 0-2 are xyz / r (the crop radius bounds them in [-1, 1] for
/// cropped input). Columns 3-5 are (xyz - centroid) / max distance to the
/// centroid (floor 1e-9). Both halves are clamped to [-1, 1].
pub fn build_point_features(
    cloud: &PointCloud,
    indices: &[usize],
    r: f64,
) -> Result<SampledPoints> {
    if indices.is_empty() {
        return Err(AprError::domain("cannot featurize an empty index list"));
    }
    if r <= 0.0 {
        return Err(AprError::Domain(format!("radius must be > 0, got {r}")));
    }
    let mut centroid = [0.0f64; 3];
    for &i in indices {
        let p = cloud.xyz(i);
        for d in 0..3 {
            centroid[d] += p[d];
        }
    }
    for c in centroid.iter_mut() {
        *c /= indices.len() as f64;
    }
    let mut max_dist: f64 = 0.0;
    for &i in indices {
        max_dist = max_dist.max(d2(cloud.xyz(i), centroid).sqrt());
    }
    let scale = max_dist.max(1e-9);
    let features = indices
        .iter()
        .map(|&i| {
            let p = cloud.xyz(i);
            let mut row = [0.0f64; 6];
            for d in 0..3 {
                row[d] = (p[d] / r).clamp(-1.0, 1.0);
                row[d + 3] = ((p[d] - centroid[d]) / scale).clamp(-1.0, 1.0);
            }
            row
        })
        .collect();
    Ok(SampledPoints { features })
}

/// Crop, sample, and featurize in one call.
pub fn sample_point_features(
    cloud: &PointCloud,
    k: usize,
    r: f64,
    seed: u64,
) -> Result<SampledPoints> {
    let cropped = crop_radius(cloud, r)?;
    let indices = farthest_point_sample(&cropped, k, seed)?;
    build_point_features(&cropped, &indices, r)
}

/// BEV rasterization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevConfig {
    /// Far edge of the grid along +x, meters.
    pub x_max: f64,
    /// Lateral half extent along y, meters.
    pub y_max: f64,
    /// Cell size, meters.
    pub cell: f64,
    /// Height threshold splitting the two z bins, meters.
    pub z_split: f64,
    /// Per-cell count divisor before clamping to 1.0. Infinite cap keeps
    /// raw counts (used to check count conservation).
    pub cap: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        BevConfig {
            x_max: 32.0,
            y_max: 16.0,
            cell: 0.125,
            z_split: 0.0,
            cap: 32.0,
        }
    }
}

/// 2-bin height histogram over a 256x256 BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BevHistogram {
    /// 2 * 256 * 256 values: bin b plane at b*256*256, row-major.
    pub grid: Vec<f64>,
    pub extent: f64,
    pub z_split: f64,
}

impl BevHistogram {
    #[inline]
    pub fn get(&self, bin: usize, row: usize, col: usize) -> f64 {
        self.grid[(bin * BEV_SIZE + row) * BEV_SIZE + col]
    }
}

/// Rasterize a cloud into the 2-bin BEV histogram.
///
/// Cell indices: row = floor((x_max - x)/cell), col = floor((y_max - y)/cell);
/// points whose indices fall outside [0, 256) are ignored. Bin 0 counts
/// z < z_split, bin 1 counts z >= z_split. Finite caps divide counts by cap
/// and clamp to 1.0; an infinite cap leaves raw counts.
pub fn bev_histogram(cloud: &PointCloud, cfg: &BevConfig) -> Result<BevHistogram> {
    if cfg.cell <= 0.0 {
        return Err(AprError::Domain(format!(
            "cell size must be > 0, got {}",
            cfg.cell
        )));
    }
    let mut counts = vec![0.0f64; 2 * BEV_SIZE * BEV_SIZE];
    for p in &cloud.points {
        let rowf = ((cfg.x_max - p[0]) / cfg.cell).floor();
        let colf = ((cfg.y_max - p[1]) / cfg.cell).floor();
        if rowf < 0.0 || rowf >= BEV_SIZE as f64 || colf < 0.0 || colf >= BEV_SIZE as f64 {
            continue;
        }
        let bin = usize::from(p[2] >= cfg.z_split);
        counts[(bin * BEV_SIZE + rowf as usize) * BEV_SIZE + colf as usize] += 1.0;
    }
    if cfg.cap.is_finite() {
        if cfg.cap <= 0.0 {
            return Err(AprError::Domain(format!(
                "count cap must be > 0, got {}",
                cfg.cap
            )));
        }
        for v in counts.iter_mut() {
            *v = (*v / cfg.cap).min(1.0);
        }
    }
    Ok(BevHistogram {
        grid: counts,
        extent: cfg.x_max,
        z_split: cfg.z_split,
    })
}

/// Write a cloud as little-endian f32 (x, y, z, intensity) records.
pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AprError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &cloud.points {
        for v in p {
            w.write_all(&(*v as f32).to_le_bytes())
                .map_err(|e| AprError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| AprError::io(path, e))
}

/// Read a cloud of little-endian f32 records. The file size must be a
/// multiple of 16 bytes.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AprError::io(path, e))?;
    parse_cloud(&bytes).map_err(|e| AprError::io(path, e))
}

/// Decode the binary cloud format from an in-memory buffer.
pub fn parse_cloud(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("size {} is not a multiple of 16", bytes.len()));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let mut row = [0.0f64; 4];
        for (d, c) in rec.chunks_exact(4).enumerate() {
            row[d] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
        points.push(row);
    }
    PointCloud::new(points).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud_of(xyz: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(xyz.iter().map(|p| [p[0], p[1], p[2], 0.5]).collect()).unwrap()
    }

    fn random_cloud(n: usize, extent: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

    /// Greedy FPS oracle that rescans the whole chosen set every round.
    fn fps_oracle(xyz: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
        let mut picked = vec![start];
        while picked.len() < k {
            let mut best_i = usize::MAX;
            let mut best_d = -1.0;
            for i in 0..xyz.len() {
                if picked.contains(&i) {
                    continue;
                }
                let near = picked
                    .iter()
                    .map(|&j| d2(xyz[i], xyz[j]))
                    .fold(f64::INFINITY, f64::min);
                if near > best_d {
                    best_d = near;
                    best_i = i;
                }
            }
            picked.push(best_i);
        }
        picked
    }

    #[test]
    fn crop_retains_inside_removes_outside() {
        let cloud = cloud_of(&[[19.0, 0.0, 0.0], [21.0, 0.0, 0.0], [0.0, 20.0, 0.0]]);
        let out = crop_radius(&cloud, 20.0).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.xyz(0), [19.0, 0.0, 0.0]);
        assert_eq!(out.xyz(1), [0.0, 20.0, 0.0]);
    }

    #[test]
    fn crop_empty_and_idempotent() {
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(crop_radius(&empty, 20.0).unwrap().is_empty());

        let cloud = random_cloud(200, 40.0, 3);
        let once = crop_radius(&cloud, 20.0).unwrap();
        let twice = crop_radius(&once, 20.0).unwrap();
        assert_eq!(once, twice);
        assert!(once.len() <= cloud.len());
    }

    #[test]
    fn fps_collinear_example() {
        let xyz = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(fps_greedy(&xyz, 2, 0, FpsTieBreak::LowestIndex), vec![0, 2]);
    }

    #[test]
    fn fps_exhaustion_is_permutation() {
        let cloud = random_cloud(17, 10.0, 5);
        let idx = farthest_point_sample(&cloud, 17, 9).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn fps_k1_is_start() {
        let cloud = random_cloud(8, 10.0, 5);
        let idx = farthest_point_sample(&cloud, 1, 42).unwrap();
        assert_eq!(idx.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(idx[0], rng.gen_range(0..8));
    }

    #[test]
    fn fps_empty_cloud_errors() {
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(farthest_point_sample(&empty, 4, 0).is_err());
    }

    #[test]
    fn fps_matches_oracle_across_seeds() {
        for seed in 0..100u64 {
            let n = 8 + (seed as usize * 7) % 57;
            let cloud = random_cloud(n, 15.0, seed.wrapping_mul(0x9e37));
            let k = 1 + (seed as usize) % n;
            let got = farthest_point_sample(&cloud, k, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = rng.gen_range(0..n);
            let xyz: Vec<[f64; 3]> = (0..n).map(|i| cloud.xyz(i)).collect();
            let want = fps_oracle(&xyz, k, start);
            assert_eq!(got, want, "seed {seed} n {n} k {k}");
        }
    }

    #[test]
    fn fps_no_duplicates_when_k_fits() {
        let cloud = random_cloud(64, 10.0, 11);
        let idx = farthest_point_sample(&cloud, 40, 3).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
    }

    #[test]
    fn fps_padding_for_sparse_clouds() {
        let cloud = random_cloud(3, 5.0, 2);
        let idx = farthest_point_sample(&cloud, 10, 4).unwrap();
        assert_eq!(idx.len(), 10);
        let mut head = idx[..3].to_vec();
        head.sort_unstable();
        assert_eq!(head, vec![0, 1, 2]);
        assert!(idx[3..].iter().all(|&i| i < 3));
    }

    #[test]
    fn fps_dispersion_non_increasing() {
        let cloud = random_cloud(32, 10.0, 7);
        let xyz: Vec<[f64; 3]> = (0..32).map(|i| cloud.xyz(i)).collect();
        let mut prev = f64::INFINITY;
        for k in 2..=32 {
            let idx = farthest_point_sample(&cloud, k, 1).unwrap();
            let mut min_pair = f64::INFINITY;
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    min_pair = min_pair.min(d2(xyz[idx[a]], xyz[idx[b]]).sqrt());
                }
            }
            assert!(min_pair <= prev + 1e-12, "k {k}: {min_pair} > {prev}");
            prev = min_pair;
        }
    }

    #[test]
    fn features_single_repeated_point() {
        let cloud = cloud_of(&[[3.0, -4.0, 1.0]]);
        let out = build_point_features(&cloud, &vec![0; 16], 20.0).unwrap();
        for row in &out.features {
            assert_eq!(&row[3..], &[0.0, 0.0, 0.0]);
            assert!((row[0] - 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn features_radius_scaling() {
        let cloud = cloud_of(&[[20.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let out = build_point_features(&cloud, &[0, 1], 20.0).unwrap();
        assert_eq!(out.features[0][0], 1.0);
        assert_eq!(out.features[1][0], 0.0);
    }

    #[test]
    fn features_symmetric_pair_negates() {
        let cloud = cloud_of(&[[2.0, -3.0, 1.0], [-2.0, 3.0, -1.0]]);
        let out = build_point_features(&cloud, &[0, 1], 20.0).unwrap();
        for d in 0..6 {
            assert!((out.features[0][d] + out.features[1][d]).abs() < 1e-12);
        }
    }

    #[test]
    fn features_follow_index_permutation() {
        let cloud = random_cloud(20, 10.0, 13);
        let idx: Vec<usize> = (0..20).collect();
        let mut rev = idx.clone();
        rev.reverse();
        let a = build_point_features(&cloud, &idx, 20.0).unwrap();
        let b = build_point_features(&cloud, &rev, 20.0).unwrap();
        // Centroid summation order differs, so match to rounding error.
        for i in 0..20 {
            for d in 0..6 {
                assert!((a.features[i][d] - b.features[19 - i][d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn features_within_bounds_after_pipeline() {
        let cloud = random_cloud(500, 30.0, 21);
        let out = sample_point_features(&cloud, 128, 20.0, 9).unwrap();
        assert_eq!(out.features.len(), 128);
        for row in &out.features {
            for v in row {
                assert!((-1.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn bev_empty_cloud_all_zero() {
        let empty = PointCloud::new(vec![]).unwrap();
        let h = bev_histogram(&empty, &BevConfig::default()).unwrap();
        assert!(h.grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bev_single_point_cell() {
        let cloud = cloud_of(&[[16.0, 0.0, 1.0]]);
        let h = bev_histogram(&cloud, &BevConfig::default()).unwrap();
        let nonzero: Vec<usize> = (0..h.grid.len()).filter(|&i| h.grid[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((h.get(1, 128, 128) - 1.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn bev_z_split_boundary_counts_in_upper_bin() {
        let cloud = cloud_of(&[[16.0, 0.0, 0.0], [16.0, 0.0, -0.01]]);
        let h = bev_histogram(&cloud, &BevConfig::default()).unwrap();
        assert!((h.get(1, 128, 128) - 1.0 / 32.0).abs() < 1e-12);
        assert!((h.get(0, 128, 128) - 1.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn bev_raw_mode_conserves_in_bounds_counts() {
        let cloud = random_cloud(2000, 40.0, 17);
        let cfg = BevConfig {
            cap: f64::INFINITY,
            ..BevConfig::default()
        };
        let h = bev_histogram(&cloud, &cfg).unwrap();
        let mut expect = [0.0f64; 2];
        for p in &cloud.points {
            let row = ((cfg.x_max - p[0]) / cfg.cell).floor();
            let col = ((cfg.y_max - p[1]) / cfg.cell).floor();
            if (0.0..256.0).contains(&row) && (0.0..256.0).contains(&col) {
                expect[usize::from(p[2] >= cfg.z_split)] += 1.0;
            }
        }
        let plane = BEV_SIZE * BEV_SIZE;
        let got0: f64 = h.grid[..plane].iter().sum();
        let got1: f64 = h.grid[plane..].iter().sum();
        assert_eq!(got0, expect[0]);
        assert_eq!(got1, expect[1]);
    }

    #[test]
    fn bev_translation_shifts_rows() {
        let base = cloud_of(&[[16.0, 0.0, 1.0], [16.0, 2.0, -1.0], [10.0, -3.0, 0.5]]);
        let shifted = PointCloud::new(
            base.points
                .iter()
                .map(|p| [p[0] + 0.125, p[1], p[2], p[3]])
                .collect(),
        )
        .unwrap();
        let cfg = BevConfig::default();
        let a = bev_histogram(&base, &cfg).unwrap();
        let b = bev_histogram(&shifted, &cfg).unwrap();
        for bin in 0..2 {
            for row in 0..BEV_SIZE - 1 {
                for col in 0..BEV_SIZE {
                    assert_eq!(a.get(bin, row + 1, col), b.get(bin, row, col));
                }
            }
        }
    }

    #[test]
    fn bev_cells_normalized_to_unit_interval() {
        let mut pts = Vec::new();
        for _ in 0..100 {
            pts.push([16.0, 0.0, 1.0]);
        }
        let cloud = cloud_of(&pts);
        let h = bev_histogram(&cloud, &BevConfig::default()).unwrap();
        assert_eq!(h.get(1, 128, 128), 1.0);
        assert!(h.grid.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cloud_file_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        let path2 = dir.path().join("scan2.bin");
        let cloud = random_cloud(257, 30.0, 23);
        write_cloud(&cloud, &path).unwrap();
        let read = read_cloud(&path).unwrap();
        write_cloud(&read, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        let again = read_cloud(&path2).unwrap();
        assert_eq!(read, again);
    }

    #[test]
    fn cloud_file_rejects_ragged_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [0u8; 15]).unwrap();
        assert!(read_cloud(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_crop_subset_and_bounded(seed in 0u64..1000) {
            let cloud = random_cloud(100, 35.0, seed);
            let out = crop_radius(&cloud, 20.0).unwrap();
            for i in 0..out.len() {
                let p = out.xyz(i);
                prop_assert!(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 400.0 + 1e-9);
            }
        }

        #[test]
        fn prop_fps_multiset_stable_under_permutation(seed in 0u64..200) {
            let cloud = random_cloud(24, 10.0, seed);
            let xyz: Vec<[f64; 3]> = (0..24).map(|i| cloud.xyz(i)).collect();
            let mut perm: Vec<usize> = (0..24).collect();
            // Deterministic shuffle derived from the seed.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            for i in (1..24).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let shuffled: Vec<[f64; 3]> = perm.iter().map(|&i| xyz[i]).collect();

            let start_a = xyz
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .unwrap()
                .0;
            let start_b = shuffled
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .unwrap()
                .0;
            let a = fps_greedy(&xyz, 8, start_a, FpsTieBreak::LexCoords);
            let b = fps_greedy(&shuffled, 8, start_b, FpsTieBreak::LexCoords);
            let mut pa: Vec<[f64; 3]> = a.iter().map(|&i| xyz[i]).collect();
            let mut pb: Vec<[f64; 3]> = b.iter().map(|&i| shuffled[i]).collect();
            pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(pa, pb);
        }
    }
}
