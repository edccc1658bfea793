//! Strided convolutional backbone for image and BEV inputs.
//!
//! Five 3x3 stages (stem + 4) with ReLU. From a 256-pixel input the first
//! four stages stride by 2 and the last by 1, leaving the orientation
//! endpoint F_q at 32x32 after stage 2 and the position endpoint F_x at
//! 16x16 after stage 4.

use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, NodeId, ParamRegistry, Tensor};

use super::config::CnnPlan;

const STRIDES: [usize; 5] = [2, 2, 2, 2, 1];

fn stage_channels(plan: &CnnPlan) -> [usize; 5] {
    [plan.stem, plan.stage1, plan.stage2, plan.stage3, plan.stage4]
}

fn stage_name(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.conv{i}.w"), format!("{prefix}.conv{i}.b"))
}

/// Register all backbone parameters under `prefix`.
pub fn register_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_channels: usize,
    plan: &CnnPlan,
) {
    let mut c_in = in_channels;
    for (i, c_out) in stage_channels(plan).into_iter().enumerate() {
        let limit = 1.0 / ((c_in * 9) as f64).sqrt();
        let (wn, bn) = stage_name(prefix, i);
        reg.insert(&wn, Tensor::uniform(rng, &[c_out, c_in, 3, 3], -limit, limit));
        reg.insert(&bn, Tensor::uniform(rng, &[c_out], -limit, limit));
        c_in = c_out;
    }
}

/// Forward pass. Returns (F_q after stage 2, F_x after stage 4).
pub fn forward(g: &mut Graph, reg: &ParamRegistry, prefix: &str, x: NodeId) -> (NodeId, NodeId) {
    let mut h = x;
    let mut f_q = None;
    for (i, stride) in STRIDES.into_iter().enumerate() {
        let (wn, bn) = stage_name(prefix, i);
        let w = g.param(reg, &wn);
        let b = g.param(reg, &bn);
        let conv = g.conv2d(h, w, Some(b), stride, 1);
        h = g.relu(conv);
        if i == 2 {
            f_q = Some(h);
        }
    }
    (f_q.expect("stage 2 always runs"), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn build(in_channels: usize) -> ParamRegistry {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reg = ParamRegistry::new();
        register_params(&mut reg, &mut rng, "cnn", in_channels, &CnnPlan::default());
        reg
    }

    #[test]
    fn endpoint_shapes_image_input() {
        let reg = build(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 256, 256]));
        let (f_q, f_x) = forward(&mut g, &reg, "cnn", x);
        assert_eq!(g.value(f_q).shape, vec![40, 32, 32]);
        assert_eq!(g.value(f_x).shape, vec![112, 16, 16]);
    }

    #[test]
    fn endpoint_shapes_bev_input() {
        let reg = build(2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 256, 256]));
        let (f_q, f_x) = forward(&mut g, &reg, "cnn", x);
        assert_eq!(g.value(f_q).shape, vec![40, 32, 32]);
        assert_eq!(g.value(f_x).shape, vec![112, 16, 16]);
    }

    #[test]
    fn zero_input_stays_finite_and_bias_driven() {
        let reg = build(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 256, 256]));
        let (f_q, f_x) = forward(&mut g, &reg, "cnn", x);
        assert!(g.value(f_q).is_finite());
        assert!(g.value(f_x).is_finite());
        // Interior cells of the first stage equal relu(bias) exactly; the
        // endpoints only need finiteness, checked above.
        assert!(g.value(f_x).data.iter().all(|&v| v >= 0.0));
    }
}
