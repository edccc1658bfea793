//! L1 pose loss with learned homoscedastic weighting between the
//! position and orientation terms.

use crate::diff::{Graph, NodeId, ParamRegistry, Tensor};

/// Sum of absolute position component differences, in normalized space.
pub fn position_loss(x_p: [f64; 3], x_t: [f64; 3]) -> f64 {
    x_p.iter().zip(&x_t).map(|(a, b)| (a - b).abs()).sum()
}

/// Sum of absolute quaternion component differences. The prediction is
/// raw; the target is a canonicalized unit quaternion.
pub fn orientation_loss(q_p: [f64; 4], q_t: [f64; 4]) -> f64 {
    q_p.iter().zip(&q_t).map(|(a, b)| (a - b).abs()).sum()
}

/// Weighted total: L_p·exp(−s_x) + s_x + L_o·exp(−s_q) + s_q.
pub fn combined_loss(l_p: f64, l_o: f64, s_x: f64, s_q: f64) -> f64 {
    l_p * (-s_x).exp() + s_x + l_o * (-s_q).exp() + s_q
}

/// Loss nodes for one sample.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub l_p: NodeId,
    pub l_o: NodeId,
    pub l_pose: NodeId,
}

/// Append the weighted pose loss to the graph. `pos` is the [1, 3] head
/// output, `ori` the raw [1, 4] head output; the temperatures come from
/// the registry entries loss.s_x and loss.s_q so they train with the rest
/// of the parameters.
pub fn pose_loss_graph(
    g: &mut Graph,
    reg: &ParamRegistry,
    pos: NodeId,
    ori: NodeId,
    target_pos: [f64; 3],
    target_ori: [f64; 4],
) -> LossNodes {
    let tp = g.constant(Tensor::new(vec![1, 3], target_pos.to_vec()));
    let dp = g.sub(pos, tp);
    let ap = g.abs(dp);
    let l_p = g.sum_all(ap);

    let tq = g.constant(Tensor::new(vec![1, 4], target_ori.to_vec()));
    let dq = g.sub(ori, tq);
    let aq = g.abs(dq);
    let l_o = g.sum_all(aq);

    let s_x = g.param(reg, "loss.s_x");
    let s_q = g.param(reg, "loss.s_q");
    let l_pose = weighted_total(g, l_p, l_o, s_x, s_q);
    LossNodes { l_p, l_o, l_pose }
}

fn weighted_total(g: &mut Graph, l_p: NodeId, l_o: NodeId, s_x: NodeId, s_q: NodeId) -> NodeId {
    let ex = {
        let n = g.scale(s_x, -1.0);
        g.exp(n)
    };
    let eq = {
        let n = g.scale(s_q, -1.0);
        g.exp(n)
    };
    let wp = g.mul(l_p, ex);
    let wo = g.mul(l_o, eq);
    let pos_term = g.add(wp, s_x);
    let ori_term = g.add(wo, s_q);
    g.add(pos_term, ori_term)
}
