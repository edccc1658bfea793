//! Point backbone: two set-abstraction stages, one feature-propagation
//! stage, and the grouped grid ordering that turns the resulting vectors
//! into an encoded token sequence.
//!
//! Sampling, neighbor search, and ordering depend only on coordinates, so
//! they are precomputed once per frame into a `PointPlan`; the
//! differentiable forward pass replays the stored index structure. All
//! coordinate-driven choices break ties lexicographically so a permuted
//! input yields the same multiset of (centroid, vector) pairs.

use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, NodeId, ParamRegistry, Tensor};
use crate::error::{AprError, Result};
use crate::lidar::{fps_greedy, FpsTieBreak, SampledPoints};

use super::config::PointPlanConfig;

/// Neighbor structure of one set-abstraction stage. Indices refer to the
/// previous level's rows.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub centroid_idx: Vec<usize>,
    /// Flattened [centroids * neighbors].
    pub neighbor_idx: Vec<usize>,
    /// Neighbor offsets from their centroid, [centroids * neighbors, 3].
    pub rel: Tensor,
}

/// Three-neighbor inverse-distance interpolation of stage-1 features onto
/// the stage-2 centroids.
#[derive(Debug, Clone)]
pub struct FpPlan {
    pub idx: [Vec<usize>; 3],
    pub w: [Vec<f64>; 3],
}

/// Deterministic arrangement of the output vectors: 8 z-groups, each a
/// 4-column grid ordered by x then y. All vectors keep their encoding
/// indices for the learned z/x/y tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPlan {
    /// Token t reads vector perm[t].
    pub perm: Vec<usize>,
    pub z_group: Vec<usize>,
    pub x_slot: Vec<usize>,
    pub y_slot: Vec<usize>,
}

/// Precomputed per-frame structure for the point backbone.
#[derive(Debug, Clone)]
pub struct PointPlan {
    /// Input rows, [input_points, 6].
    pub features: Tensor,
    pub sa1: StagePlan,
    pub sa2: StagePlan,
    pub fp: FpPlan,
    /// Stage-2 centroid coordinates in vector order.
    pub centroids: Vec<[f64; 3]>,
    pub grid: GridPlan,
}

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn lex_start(points: &[[f64; 3]]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if p < &points[best] {
            best = i;
        }
    }
    best
}

/// K nearest points within the radius, sorted by distance with
/// lexicographic coordinate tie-breaks. Short balls pad by repeating the
/// closest point (the centroid itself, at distance zero).
fn ball_neighbors(points: &[[f64; 3]], center: [f64; 3], radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut cands: Vec<(f64, [f64; 3], usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let d = d2(p, center);
            (d <= r2).then_some((d, p, i))
        })
        .collect();
    cands.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let mut idx: Vec<usize> = cands.iter().take(k).map(|c| c.2).collect();
    assert!(!idx.is_empty(), "centroid must lie in its own ball");
    while idx.len() < k {
        idx.push(idx[0]);
    }
    idx
}

fn build_stage(points: &[[f64; 3]], centroids: usize, neighbors: usize, radius: f64) -> StagePlan {
    let picked = fps_greedy(points, centroids, lex_start(points), FpsTieBreak::LexCoords);
    let mut neighbor_idx = Vec::with_capacity(centroids * neighbors);
    let mut rel = Vec::with_capacity(centroids * neighbors * 3);
    for &c in &picked {
        let center = points[c];
        for n in ball_neighbors(points, center, radius, neighbors) {
            neighbor_idx.push(n);
            for d in 0..3 {
                rel.push(points[n][d] - center[d]);
            }
        }
    }
    StagePlan {
        rel: Tensor::new(vec![neighbor_idx.len(), 3], rel),
        centroid_idx: picked,
        neighbor_idx,
    }
}

fn build_fp(sa1_coords: &[[f64; 3]], sa2_coords: &[[f64; 3]]) -> FpPlan {
    let mut idx = [Vec::new(), Vec::new(), Vec::new()];
    let mut w = [Vec::new(), Vec::new(), Vec::new()];
    for &c in sa2_coords {
        let mut cands: Vec<(f64, [f64; 3], usize)> = sa1_coords
            .iter()
            .enumerate()
            .map(|(i, &p)| (d2(p, c), p, i))
            .collect();
        cands.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let take: Vec<(f64, usize)> = cands
            .iter()
            .take(3)
            .map(|&(d, _, i)| (d, i))
            .collect();
        let total: f64 = take.iter().map(|&(d, _)| 1.0 / (d + 1e-8)).sum();
        for j in 0..3 {
            // Fewer than 3 stage-1 points cannot happen (config enforces
            // sa2 <= sa1), but cycle defensively on tiny reduced configs.
            let (d, i) = take[j.min(take.len() - 1)];
            idx[j].push(i);
            w[j].push(if j < take.len() { (1.0 / (d + 1e-8)) / total } else { 0.0 });
        }
    }
    FpPlan { idx, w }
}

/// Arrange vectors into 8 contiguous z-groups, each split into 4 x-ordered
/// columns sorted by y. Ties fall back to the original vector index, so
/// equal coordinates preserve input order.
pub fn grid_order(centroids: &[[f64; 3]]) -> GridPlan {
    let n = centroids.len();
    assert!(
        n % 32 == 0 && n <= 128,
        "grid ordering expects a multiple of 32 up to 128 vectors, got {n}"
    );
    let group_size = n / 8;
    let column_size = group_size / 4;

    let sort_axis = |ids: &mut [usize], axis: usize| {
        ids.sort_by(|&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .expect("finite coordinates")
                .then(a.cmp(&b))
        });
    };

    let mut by_z: Vec<usize> = (0..n).collect();
    sort_axis(&mut by_z, 2);

    let mut perm = Vec::with_capacity(n);
    let mut z_group = Vec::with_capacity(n);
    let mut x_slot = Vec::with_capacity(n);
    let mut y_slot = Vec::with_capacity(n);
    for (gi, group) in by_z.chunks_exact(group_size).enumerate() {
        let mut by_x = group.to_vec();
        sort_axis(&mut by_x, 0);
        for (ci, column) in by_x.chunks_exact(column_size).enumerate() {
            let mut by_y = column.to_vec();
            sort_axis(&mut by_y, 1);
            for (yi, &v) in by_y.iter().enumerate() {
                perm.push(v);
                z_group.push(gi);
                x_slot.push(ci);
                y_slot.push(yi);
            }
        }
    }
    GridPlan {
        perm,
        z_group,
        x_slot,
        y_slot,
    }
}

impl PointPlan {
    /// Precompute sampling, grouping, interpolation, and ordering for one
    /// frame of sampled point features.
    pub fn build(points: &SampledPoints, cfg: &PointPlanConfig) -> Result<PointPlan> {
        if points.features.len() != cfg.input_points {
            return Err(AprError::Domain(format!(
                "point plan expects {} rows, got {}",
                cfg.input_points,
                points.features.len()
            )));
        }
        let coords: Vec<[f64; 3]> = points
            .features
            .iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let sa1 = build_stage(&coords, cfg.sa1.centroids, cfg.sa1.neighbors, cfg.sa1.radius);
        let sa1_coords: Vec<[f64; 3]> = sa1.centroid_idx.iter().map(|&i| coords[i]).collect();
        let sa2 = build_stage(
            &sa1_coords,
            cfg.sa2.centroids,
            cfg.sa2.neighbors,
            cfg.sa2.radius,
        );
        let sa2_coords: Vec<[f64; 3]> = sa2.centroid_idx.iter().map(|&i| sa1_coords[i]).collect();
        let fp = build_fp(&sa1_coords, &sa2_coords);
        let grid = grid_order(&sa2_coords);
        let mut features = Vec::with_capacity(points.features.len() * 6);
        for row in &points.features {
            features.extend_from_slice(row);
        }
        Ok(PointPlan {
            features: Tensor::new(vec![points.features.len(), 6], features),
            sa1,
            sa2,
            fp,
            centroids: sa2_coords,
            grid,
        })
    }
}

fn mlp_names(prefix: &str, stage: &str, layer: usize) -> (String, String) {
    (
        format!("{prefix}.{stage}.mlp{layer}.w"),
        format!("{prefix}.{stage}.mlp{layer}.b"),
    )
}

/// Register all point-backbone parameters under `prefix`.
pub fn register_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &PointPlanConfig,
) {
    let register_mlp = |reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, stage: &str, mut c_in: usize, widths: &[usize]| {
        for (i, &c_out) in widths.iter().enumerate() {
            let limit = 1.0 / (c_in as f64).sqrt();
            let (wn, bn) = mlp_names(prefix, stage, i);
            reg.insert(&wn, Tensor::uniform(rng, &[c_in, c_out], -limit, limit));
            reg.insert(&bn, Tensor::uniform(rng, &[c_out], -limit, limit));
            c_in = c_out;
        }
    };
    register_mlp(reg, rng, "sa1", 6 + 3, &cfg.sa1.mlp);
    let sa1_out = *cfg.sa1.mlp.last().expect("validated non-empty");
    register_mlp(reg, rng, "sa2", sa1_out + 3, &cfg.sa2.mlp);
    let sa2_out = *cfg.sa2.mlp.last().expect("validated non-empty");
    let fp_in = sa1_out + sa2_out;
    let limit = 1.0 / (fp_in as f64).sqrt();
    reg.insert(
        &format!("{prefix}.fp.lin.w"),
        Tensor::uniform(rng, &[fp_in, cfg.d_feat], -limit, limit),
    );
    reg.insert(
        &format!("{prefix}.fp.lin.b"),
        Tensor::uniform(rng, &[cfg.d_feat], -limit, limit),
    );
}

fn sa_stage(
    g: &mut Graph,
    reg: &ParamRegistry,
    prefix: &str,
    stage: &str,
    input: NodeId,
    plan: &StagePlan,
    neighbors: usize,
    widths: &[usize],
) -> NodeId {
    let gathered = g.gather_rows(input, plan.neighbor_idx.clone());
    let rel = g.constant(plan.rel.clone());
    let mut h = g.concat_last(gathered, rel);
    for i in 0..widths.len() {
        let (wn, bn) = mlp_names(prefix, stage, i);
        let w = g.param(reg, &wn);
        let b = g.param(reg, &bn);
        let lin = g.linear(h, w, b);
        h = g.relu(lin);
    }
    let c = plan.centroid_idx.len();
    let d = *widths.last().unwrap();
    let grouped = g.reshape(h, vec![c, neighbors, d]);
    g.max_mid(grouped)
}

/// Forward pass: [input_points, 6] -> [sa2.centroids, d_feat].
pub fn forward(
    g: &mut Graph,
    reg: &ParamRegistry,
    prefix: &str,
    plan: &PointPlan,
    cfg: &PointPlanConfig,
) -> NodeId {
    let x0 = g.constant(plan.features.clone());
    let sa1_out = sa_stage(
        g, reg, prefix, "sa1", x0, &plan.sa1, cfg.sa1.neighbors, &cfg.sa1.mlp,
    );
    let sa2_out = sa_stage(
        g, reg, prefix, "sa2", sa1_out, &plan.sa2, cfg.sa2.neighbors, &cfg.sa2.mlp,
    );
    let mut interp: Option<NodeId> = None;
    for j in 0..3 {
        let picked = g.gather_rows(sa1_out, plan.fp.idx[j].clone());
        let weighted = g.scale_rows(picked, plan.fp.w[j].clone());
        interp = Some(match interp {
            None => weighted,
            Some(acc) => g.add(acc, weighted),
        });
    }
    let cat = g.concat_last(interp.expect("three interpolation terms"), sa2_out);
    let w = g.param(reg, &format!("{prefix}.fp.lin.w"));
    let b = g.param(reg, &format!("{prefix}.fp.lin.b"));
    let lin = g.linear(cat, w, b);
    g.relu(lin)
}

/// Register the per-branch token projection and z/x/y encoding tables.
pub fn register_token_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    branch: &str,
    d_feat: usize,
    d_model: usize,
) {
    let limit = 1.0 / (d_feat as f64).sqrt();
    reg.insert(
        &format!("{branch}.tok.w"),
        Tensor::uniform(rng, &[d_feat, d_model], -limit, limit),
    );
    reg.insert(
        &format!("{branch}.tok.b"),
        Tensor::uniform(rng, &[d_model], -limit, limit),
    );
    reg.insert(
        &format!("{branch}.enc.z"),
        Tensor::uniform(rng, &[8, d_model / 2], -0.1, 0.1),
    );
    reg.insert(
        &format!("{branch}.enc.x"),
        Tensor::uniform(rng, &[4, d_model / 4], -0.1, 0.1),
    );
    reg.insert(
        &format!("{branch}.enc.y"),
        Tensor::uniform(rng, &[4, d_model / 4], -0.1, 0.1),
    );
}

/// Project backbone vectors to d_model, arrange them in grid order, and
/// add the concatenated z/x/y encodings.
pub fn grid_tokens(
    g: &mut Graph,
    reg: &ParamRegistry,
    branch: &str,
    vectors: NodeId,
    grid: &GridPlan,
) -> NodeId {
    let w = g.param(reg, &format!("{branch}.tok.w"));
    let b = g.param(reg, &format!("{branch}.tok.b"));
    let proj = g.linear(vectors, w, b);
    let ordered = g.gather_rows(proj, grid.perm.clone());
    let zt = g.param(reg, &format!("{branch}.enc.z"));
    let xt = g.param(reg, &format!("{branch}.enc.x"));
    let yt = g.param(reg, &format!("{branch}.enc.y"));
    let ze = g.embedding_lookup(zt, grid.z_group.clone());
    let xe = g.embedding_lookup(xt, grid.x_slot.clone());
    let ye = g.embedding_lookup(yt, grid.y_slot.clone());
    let zx = g.concat_last(ze, xe);
    let enc = g.concat_last(zx, ye);
    g.add(ordered, enc)
}
