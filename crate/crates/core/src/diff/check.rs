//! Finite-difference verification of analytic gradients.
//!
//! Central differences per coordinate against the gradients accumulated by
//! `Graph::backward`. The relative error metric is
//! |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use super::tensor::{ParamRegistry, Tensor};

pub const FD_EPSILON: f64 = 1e-5;

/// Relative error above which a coordinate is re-estimated at other
/// step sizes before being reported.
const REFINE_TRIGGER: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl FdReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} coords (worst: {}[{}] analytic {:.6e} vs numeric {:.6e})",
            self.max_rel_err,
            self.coords_checked,
            self.worst_param,
            self.worst_coord,
            self.worst_analytic,
            self.worst_numeric
        )
    }
}

/// Check analytic gradients of `f` against central differences.
///
/// `f(registry, accumulate)` must rebuild its graph from the registry's
/// current values, return the scalar loss, and accumulate gradients into
/// the registry when `accumulate` is true. It must be deterministic given
/// the registry contents (internal randomness must be freshly seeded per
/// call).
///
/// `coords_per_tensor` limits the check to a seeded random sample of
/// coordinates in each parameter tensor; `None` checks every coordinate.
/// Every parameter tensor is always visited.
pub fn finite_difference_check<F>(
    registry: &mut ParamRegistry,
    epsilon: f64,
    coords_per_tensor: Option<usize>,
    sample_seed: u64,
    mut f: F,
) -> FdReport
where
    F: FnMut(&mut ParamRegistry, bool) -> f64,
{
    registry.zero_grads();
    let _ = f(registry, true);
    let analytic: Vec<Vec<f64>> = (0..registry.len())
        .map(|id| registry.grad(id).to_vec())
        .collect();
    registry.zero_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };

    for id in 0..registry.len() {
        let numel = registry.value(id).numel();
        let coords: Vec<usize> = match coords_per_tensor {
            Some(limit) if limit < numel => {
                let mut set = HashSet::with_capacity(limit);
                while set.len() < limit {
                    set.insert(rng.gen_range(0..numel));
                }
                let mut v: Vec<usize> = set.into_iter().collect();
                v.sort_unstable();
                v
            }
            _ => (0..numel).collect(),
        };
        for c in coords {
            let a = analytic[id][c];
            let central = |registry: &mut ParamRegistry, f: &mut F, eps: f64| -> f64 {
                let orig = registry.value(id).data[c];
                registry.value_mut(id).data[c] = orig + eps;
                let fp = f(registry, false);
                registry.value_mut(id).data[c] = orig - eps;
                let fm = f(registry, false);
                registry.value_mut(id).data[c] = orig;
                (fp - fm) / (2.0 * eps)
            };
            let rel_of = |numeric: f64| (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);

            let mut numeric = central(registry, &mut f, epsilon);
            let mut rel = rel_of(numeric);
            // A wide secant can straddle a relu or abs kink, or drown a
            // tiny gradient in cancellation noise. Re-estimating at other
            // scales separates those artifacts from a wrong gradient: a
            // wrong gradient disagrees at every scale.
            if rel > REFINE_TRIGGER {
                // Smaller steps resolve kink straddles; larger steps
                // lift near-zero gradients above cancellation noise.
                for scale in [0.1, 0.01, 10.0, 100.0] {
                    let candidate = central(registry, &mut f, epsilon * scale);
                    if rel_of(candidate) < rel {
                        numeric = candidate;
                        rel = rel_of(candidate);
                    }
                    if rel <= REFINE_TRIGGER {
                        break;
                    }
                }
            }
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = registry.name_of(id).to_string();
                report.worst_coord = c;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

/// Names of every differentiable primitive covered by the FD suite.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "add_row",
    "scale",
    "scale_rows",
    "matmul",
    "bmm",
    "linear",
    "relu",
    "abs",
    "exp",
    "sum_all",
    "mean_all",
    "softmax_last",
    "layer_norm",
    "dropout",
    "concat_last",
    "reshape",
    "transpose2",
    "permute102",
    "transpose_last2",
    "gather_rows",
    "embedding_lookup",
    "max_mid",
    "conv2d",
    "attention",
];

type LossFn = Box<dyn FnMut(&mut ParamRegistry, bool) -> f64>;

/// One randomized FD scenario: a registry of parameters and a closure that
/// rebuilds the loss graph from it.
pub struct FdCase {
    pub registry: ParamRegistry,
    pub f: LossFn,
}

/// Move values off 0 so ReLU/abs kinks and max ties sit further than the
/// FD step from the evaluation point.
fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.data.iter_mut() {
        if v.abs() < 0.01 {
            *v += 0.02;
        }
    }
    t
}

/// Build the FD scenario for one primitive. The loss is a fixed random
/// projection of the primitive's output, so every output coordinate
/// contributes with a distinct weight.
pub fn build_fd_case(name: &str, seed: u64) -> FdCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0x5eed);
    let mut reg = ParamRegistry::new();
    let p = |reg: &mut ParamRegistry, n: &str, shape: &[usize], rng: &mut ChaCha8Rng| {
        reg.insert(n, off_kink(Tensor::uniform(rng, shape, -1.0, 1.0)));
    };

    // Output shape of each primitive, used to pre-draw the projection.
    let (out_shape, name_owned): (Vec<usize>, String) = match name {
        "add" | "sub" | "mul" => {
            p(&mut reg, "a", &[3, 4], &mut rng);
            p(&mut reg, "b", &[3, 4], &mut rng);
            (vec![3, 4], name.to_string())
        }
        "add_row" => {
            p(&mut reg, "a", &[4, 5], &mut rng);
            p(&mut reg, "b", &[5], &mut rng);
            (vec![4, 5], name.to_string())
        }
        "scale" | "relu" | "abs" | "exp" | "softmax_last" | "transpose2" | "reshape"
        | "dropout" => {
            p(&mut reg, "a", &[3, 4], &mut rng);
            let shape = if name == "transpose2" { vec![4, 3] } else { vec![3, 4] };
            (shape, name.to_string())
        }
        "scale_rows" => {
            p(&mut reg, "a", &[4, 3], &mut rng);
            (vec![4, 3], name.to_string())
        }
        "sum_all" | "mean_all" => {
            p(&mut reg, "a", &[3, 4], &mut rng);
            (vec![1], name.to_string())
        }
        "matmul" => {
            p(&mut reg, "a", &[3, 4], &mut rng);
            p(&mut reg, "b", &[4, 2], &mut rng);
            (vec![3, 2], name.to_string())
        }
        "bmm" => {
            p(&mut reg, "a", &[2, 3, 4], &mut rng);
            p(&mut reg, "b", &[2, 4, 2], &mut rng);
            (vec![2, 3, 2], name.to_string())
        }
        "linear" => {
            p(&mut reg, "a", &[3, 4], &mut rng);
            p(&mut reg, "w", &[4, 2], &mut rng);
            p(&mut reg, "b", &[2], &mut rng);
            (vec![3, 2], name.to_string())
        }
        "layer_norm" => {
            p(&mut reg, "a", &[3, 6], &mut rng);
            reg.insert("gamma", Tensor::uniform(&mut rng, &[6], 0.5, 1.5));
            p(&mut reg, "beta", &[6], &mut rng);
            (vec![3, 6], name.to_string())
        }
        "concat_last" => {
            p(&mut reg, "a", &[3, 2], &mut rng);
            p(&mut reg, "b", &[3, 4], &mut rng);
            (vec![3, 6], name.to_string())
        }
        "permute102" | "transpose_last2" => {
            p(&mut reg, "a", &[2, 3, 4], &mut rng);
            let shape = if name == "permute102" { vec![3, 2, 4] } else { vec![2, 4, 3] };
            (shape, name.to_string())
        }
        "gather_rows" | "embedding_lookup" => {
            p(&mut reg, "a", &[5, 3], &mut rng);
            (vec![4, 3], name.to_string())
        }
        "max_mid" => {
            p(&mut reg, "a", &[3, 4, 2], &mut rng);
            (vec![3, 2], name.to_string())
        }
        "conv2d" => {
            p(&mut reg, "x", &[2, 5, 5], &mut rng);
            p(&mut reg, "w", &[3, 2, 3, 3], &mut rng);
            p(&mut reg, "b", &[3], &mut rng);
            (vec![3, 3, 3], name.to_string())
        }
        "attention" => {
            p(&mut reg, "q", &[3, 8], &mut rng);
            p(&mut reg, "k", &[4, 8], &mut rng);
            p(&mut reg, "v", &[4, 8], &mut rng);
            (vec![3, 8], name.to_string())
        }
        other => panic!("unknown primitive {other:?}"),
    };

    let proj = Tensor::uniform(&mut rng, &out_shape, -1.0, 1.0);
    let row_weights: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let drop_seed: u64 = rng.gen();

    let f = Box::new(move |reg: &mut ParamRegistry, accumulate: bool| {
        let mut g = Graph::new();
        let out = match name_owned.as_str() {
            "add" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.add(a, b)
            }
            "sub" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.sub(a, b)
            }
            "mul" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.mul(a, b)
            }
            "add_row" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.add_row(a, b)
            }
            "scale" => {
                let a = g.param(reg, "a");
                g.scale(a, 1.7)
            }
            "scale_rows" => {
                let a = g.param(reg, "a");
                g.scale_rows(a, row_weights.clone())
            }
            "matmul" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.matmul(a, b)
            }
            "bmm" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.bmm(a, b)
            }
            "linear" => {
                let (a, w, b) = (g.param(reg, "a"), g.param(reg, "w"), g.param(reg, "b"));
                g.linear(a, w, b)
            }
            "relu" => {
                let a = g.param(reg, "a");
                g.relu(a)
            }
            "abs" => {
                let a = g.param(reg, "a");
                g.abs(a)
            }
            "exp" => {
                let a = g.param(reg, "a");
                g.exp(a)
            }
            "sum_all" => {
                let a = g.param(reg, "a");
                g.sum_all(a)
            }
            "mean_all" => {
                let a = g.param(reg, "a");
                g.mean_all(a)
            }
            "softmax_last" => {
                let a = g.param(reg, "a");
                g.softmax_last(a)
            }
            "layer_norm" => {
                let (a, ga, be) = (
                    g.param(reg, "a"),
                    g.param(reg, "gamma"),
                    g.param(reg, "beta"),
                );
                g.layer_norm(a, ga, be)
            }
            "dropout" => {
                // Same mask on every call so the function stays
                // deterministic under perturbation.
                let mut drng = ChaCha8Rng::seed_from_u64(drop_seed);
                let a = g.param(reg, "a");
                g.dropout(a, 0.3, true, &mut drng)
            }
            "concat_last" => {
                let (a, b) = (g.param(reg, "a"), g.param(reg, "b"));
                g.concat_last(a, b)
            }
            "reshape" => {
                let a = g.param(reg, "a");
                g.reshape(a, vec![2, 6])
            }
            "transpose2" => {
                let a = g.param(reg, "a");
                g.transpose2(a)
            }
            "permute102" => {
                let a = g.param(reg, "a");
                g.permute102(a)
            }
            "transpose_last2" => {
                let a = g.param(reg, "a");
                g.transpose_last2(a)
            }
            "gather_rows" => {
                let a = g.param(reg, "a");
                g.gather_rows(a, vec![4, 0, 2, 2])
            }
            "embedding_lookup" => {
                let a = g.param(reg, "a");
                g.embedding_lookup(a, vec![1, 3, 3, 0])
            }
            "max_mid" => {
                let a = g.param(reg, "a");
                g.max_mid(a)
            }
            "conv2d" => {
                let (x, w, b) = (g.param(reg, "x"), g.param(reg, "w"), g.param(reg, "b"));
                g.conv2d(x, w, Some(b), 2, 1)
            }
            "attention" => {
                let (q, k, v) = (g.param(reg, "q"), g.param(reg, "k"), g.param(reg, "v"));
                g.attention(q, k, v, 2)
            }
            other => panic!("unknown primitive {other:?}"),
        };
        let pnode = g.constant(proj.clone());
        let weighted = if g.value(out).shape == proj.shape {
            g.mul(out, pnode)
        } else {
            // Reductions already emit scalars; reshape the projection.
            let r = g.reshape(out, proj.shape.clone());
            g.mul(r, pnode)
        };
        let loss = g.sum_all(weighted);
        let v = g.scalar_value(loss);
        if accumulate {
            g.backward(loss, reg);
        }
        v
    });

    FdCase { registry: reg, f }
}

/// Run the FD suite for every primitive across `seeds` random scenarios.
/// Returns (primitive, max relative error over all seeds and coordinates).
pub fn primitive_fd_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    PRIMITIVES
        .iter()
        .map(|&name| {
            let mut worst = 0.0f64;
            for seed in 0..seeds {
                let mut case = build_fd_case(name, seed);
                let report =
                    finite_difference_check(&mut case.registry, FD_EPSILON, None, seed, case.f);
                worst = worst.max(report.max_rel_err);
            }
            (name, worst)
        })
        .collect()
}
