//! Branch transformer: a pre-norm encoder over the token sequence and a
//! pre-norm decoder that cross-attends from a single learned query, plus
//! the tokenizer that flattens a CNN feature map into encoded tokens and
//! the two-layer regression head.

use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, NodeId, ParamRegistry, Tensor};

fn linear_pair(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) {
    let limit = 1.0 / (d_in as f64).sqrt();
    reg.insert(&format!("{name}.w"), Tensor::uniform(rng, &[d_in, d_out], -limit, limit));
    reg.insert(&format!("{name}.b"), Tensor::uniform(rng, &[d_out], -limit, limit));
}

fn ln_pair(reg: &mut ParamRegistry, name: &str, d: usize) {
    reg.insert(&format!("{name}.g"), Tensor::new(vec![d], vec![1.0; d]));
    reg.insert(&format!("{name}.b"), Tensor::zeros(&[d]));
}

fn attn_params(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, name: &str, d: usize) {
    // Keys carry no bias: a shared key offset shifts every attention
    // score by the same amount and cancels in the softmax, so its
    // gradient is identically zero.
    for proj in ["wq", "wk", "wv", "wo"] {
        let limit = 1.0 / (d as f64).sqrt();
        reg.insert(&format!("{name}.{proj}"), Tensor::uniform(rng, &[d, d], -limit, limit));
        if proj != "wk" {
            let bias = proj.replace('w', "b");
            reg.insert(&format!("{name}.{bias}"), Tensor::zeros(&[d]));
        }
    }
}

fn ff_params(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, name: &str, d: usize, ff: usize) {
    linear_pair(reg, rng, &format!("{name}.w1"), d, ff);
    linear_pair(reg, rng, &format!("{name}.w2"), ff, d);
}

/// Register the token projection and row/column embeddings for a CNN
/// feature map of shape [c_in, h, w].
pub fn register_map_token_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    branch: &str,
    c_in: usize,
    h: usize,
    w: usize,
    d_model: usize,
) {
    linear_pair(reg, rng, &format!("{branch}.tok"), c_in, d_model);
    reg.insert(
        &format!("{branch}.enc.row"),
        Tensor::uniform(rng, &[h, d_model / 2], -0.1, 0.1),
    );
    reg.insert(
        &format!("{branch}.enc.col"),
        Tensor::uniform(rng, &[w, d_model / 2], -0.1, 0.1),
    );
}

/// Register one branch's encoder stack, decoder stack, and query.
pub fn register_branch_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    branch: &str,
    d_model: usize,
    layers: usize,
    feedforward: usize,
) {
    for i in 0..layers {
        let base = format!("{branch}.enc_layer{i}");
        ln_pair(reg, &format!("{base}.ln1"), d_model);
        attn_params(reg, rng, &format!("{base}.attn"), d_model);
        ln_pair(reg, &format!("{base}.ln2"), d_model);
        ff_params(reg, rng, &format!("{base}.ff"), d_model, feedforward);
    }
    ln_pair(reg, &format!("{branch}.enc_final"), d_model);
    for i in 0..layers {
        let base = format!("{branch}.dec_layer{i}");
        ln_pair(reg, &format!("{base}.ln1"), d_model);
        attn_params(reg, rng, &format!("{base}.cross"), d_model);
        ln_pair(reg, &format!("{base}.ln2"), d_model);
        ff_params(reg, rng, &format!("{base}.ff"), d_model, feedforward);
    }
    ln_pair(reg, &format!("{branch}.dec_final"), d_model);
    reg.insert(
        &format!("{branch}.query"),
        Tensor::uniform(rng, &[1, d_model], -0.1, 0.1),
    );
}

/// Register a two-layer regression head: d_model -> d_model -> d_out.
pub fn register_head_params(
    reg: &mut ParamRegistry,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d_model: usize,
    d_out: usize,
) {
    linear_pair(reg, rng, &format!("{prefix}.w1"), d_model, d_model);
    linear_pair(reg, rng, &format!("{prefix}.w2"), d_model, d_out);
}

fn apply_ln(g: &mut Graph, reg: &ParamRegistry, name: &str, x: NodeId) -> NodeId {
    let gamma = g.param(reg, &format!("{name}.g"));
    let beta = g.param(reg, &format!("{name}.b"));
    g.layer_norm(x, gamma, beta)
}

fn project(g: &mut Graph, reg: &ParamRegistry, name: &str, which: &str, x: NodeId) -> NodeId {
    let w = g.param(reg, &format!("{name}.{which}"));
    let b = g.param(reg, &format!("{name}.{}", which.replace('w', "b")));
    g.linear(x, w, b)
}

#[allow(clippy::too_many_arguments)]
fn attention_block(
    g: &mut Graph,
    reg: &ParamRegistry,
    name: &str,
    q_in: NodeId,
    kv_in: NodeId,
    heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let q = project(g, reg, name, "wq", q_in);
    let wk = g.param(reg, &format!("{name}.wk"));
    let k = g.matmul(kv_in, wk);
    let v = project(g, reg, name, "wv", kv_in);
    let mixed = g.attention(q, k, v, heads);
    let out = project(g, reg, name, "wo", mixed);
    g.dropout(out, dropout, train, rng)
}

fn feedforward_block(
    g: &mut Graph,
    reg: &ParamRegistry,
    name: &str,
    x: NodeId,
    dropout: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let w1 = g.param(reg, &format!("{name}.w1.w"));
    let b1 = g.param(reg, &format!("{name}.w1.b"));
    let w2 = g.param(reg, &format!("{name}.w2.w"));
    let b2 = g.param(reg, &format!("{name}.w2.b"));
    let h = g.linear(x, w1, b1);
    let h = g.relu(h);
    let out = g.linear(h, w2, b2);
    g.dropout(out, dropout, train, rng)
}

/// Branch forward pass: encode the tokens, then decode a single query
/// against the encoded memory. Returns the [1, d_model] branch vector.
#[allow(clippy::too_many_arguments)]
pub fn forward_branch(
    g: &mut Graph,
    reg: &ParamRegistry,
    branch: &str,
    tokens: NodeId,
    layers: usize,
    heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let mut memory = tokens;
    for i in 0..layers {
        let base = format!("{branch}.enc_layer{i}");
        let normed = apply_ln(g, reg, &format!("{base}.ln1"), memory);
        let attended = attention_block(
            g, reg, &format!("{base}.attn"), normed, normed, heads, dropout, train, rng,
        );
        memory = g.add(memory, attended);
        let normed = apply_ln(g, reg, &format!("{base}.ln2"), memory);
        let ff = feedforward_block(g, reg, &format!("{base}.ff"), normed, dropout, train, rng);
        memory = g.add(memory, ff);
    }
    let memory = apply_ln(g, reg, &format!("{branch}.enc_final"), memory);

    let mut query = g.param(reg, &format!("{branch}.query"));
    for i in 0..layers {
        let base = format!("{branch}.dec_layer{i}");
        let normed = apply_ln(g, reg, &format!("{base}.ln1"), query);
        let attended = attention_block(
            g, reg, &format!("{base}.cross"), normed, memory, heads, dropout, train, rng,
        );
        query = g.add(query, attended);
        let normed = apply_ln(g, reg, &format!("{base}.ln2"), query);
        let ff = feedforward_block(g, reg, &format!("{base}.ff"), normed, dropout, train, rng);
        query = g.add(query, ff);
    }
    apply_ln(g, reg, &format!("{branch}.dec_final"), query)
}

/// Flatten a [c, h, w] feature map into h*w tokens with row/column
/// encodings concatenated across the model dimension.
pub fn tokens_from_map(
    g: &mut Graph,
    reg: &ParamRegistry,
    branch: &str,
    map: NodeId,
) -> NodeId {
    let shape = g.value(map).shape.clone();
    assert_eq!(shape.len(), 3, "expected a [c, h, w] map, got {shape:?}");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let flat = g.reshape(map, vec![c, h * w]);
    let cols = g.transpose2(flat);
    let pw = g.param(reg, &format!("{branch}.tok.w"));
    let pb = g.param(reg, &format!("{branch}.tok.b"));
    let proj = g.linear(cols, pw, pb);

    let mut row_idx = Vec::with_capacity(h * w);
    let mut col_idx = Vec::with_capacity(h * w);
    for r in 0..h {
        for cc in 0..w {
            row_idx.push(r);
            col_idx.push(cc);
        }
    }
    let rt = g.param(reg, &format!("{branch}.enc.row"));
    let ct = g.param(reg, &format!("{branch}.enc.col"));
    let re = g.embedding_lookup(rt, row_idx);
    let ce = g.embedding_lookup(ct, col_idx);
    let enc = g.concat_last(re, ce);
    g.add(proj, enc)
}

/// Regression head: linear, ReLU, linear.
pub fn mlp_head(g: &mut Graph, reg: &ParamRegistry, prefix: &str, x: NodeId) -> NodeId {
    let w1 = g.param(reg, &format!("{prefix}.w1.w"));
    let b1 = g.param(reg, &format!("{prefix}.w1.b"));
    let w2 = g.param(reg, &format!("{prefix}.w2.w"));
    let b2 = g.param(reg, &format!("{prefix}.w2.b"));
    let h = g.linear(x, w1, b1);
    let h = g.relu(h);
    g.linear(h, w2, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const D: usize = 16;
    const LAYERS: usize = 2;
    const HEADS: usize = 4;
    const FF: usize = 32;

    fn branch_registry(seed: u64) -> ParamRegistry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        register_branch_params(&mut reg, &mut rng, "br", D, LAYERS, FF);
        reg
    }

    fn run_branch(reg: &ParamRegistry, tokens: Tensor, dropout: f64, train: bool) -> Vec<f64> {
        let mut g = Graph::new();
        let t = g.constant(tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = forward_branch(&mut g, reg, "br", t, LAYERS, HEADS, dropout, train, &mut rng);
        assert_eq!(g.value(out).shape, vec![1, D]);
        g.value(out).data.clone()
    }

    fn random_tokens(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&mut rng, &[n, D], -1.0, 1.0)
    }

    #[test]
    fn branch_output_shape_and_determinism() {
        let reg = branch_registry(1);
        let tokens = random_tokens(12, 2);
        let a = run_branch(&reg, tokens.clone(), 0.0, false);
        let b = run_branch(&reg, tokens, 0.0, false);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dropout_changes_training_output_only() {
        let reg = branch_registry(3);
        let tokens = random_tokens(12, 4);
        let eval_a = run_branch(&reg, tokens.clone(), 0.5, false);
        let eval_b = run_branch(&reg, tokens.clone(), 0.5, false);
        assert_eq!(eval_a, eval_b);
        let train = run_branch(&reg, tokens, 0.5, true);
        assert_ne!(eval_a, train);
    }

    /// The decoder pools over memory through softmax attention, and no
    /// step depends on token order, so shuffling tokens leaves the branch
    /// output unchanged up to summation rounding.
    #[test]
    fn token_order_does_not_affect_decoder_output() {
        let reg = branch_registry(5);
        let tokens = random_tokens(12, 6);
        let mut reversed_rows = Vec::with_capacity(tokens.data.len());
        for r in (0..12).rev() {
            reversed_rows.extend_from_slice(&tokens.data[r * D..(r + 1) * D]);
        }
        let reversed = Tensor::new(vec![12, D], reversed_rows);
        let a = run_branch(&reg, tokens, 0.0, false);
        let b = run_branch(&reg, reversed, 0.0, false);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn map_tokens_carry_position_encodings() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut reg = ParamRegistry::new();
        register_map_token_params(&mut reg, &mut rng, "br", 5, 3, 4, D);
        let mut g = Graph::new();
        let map = g.constant(Tensor::new(vec![5, 3, 4], vec![0.5; 60]));
        let tokens = tokens_from_map(&mut g, &reg, "br", map);
        let t = g.value(tokens);
        assert_eq!(t.shape, vec![12, D]);
        // Identical map columns produce identical projections, so any
        // difference between token rows comes from the encodings.
        let row0 = &t.data[0..D];
        let row5 = &t.data[5 * D..6 * D];
        assert_ne!(row0, row5);
    }

    #[test]
    fn zero_weight_head_returns_bias() {
        let mut reg = ParamRegistry::new();
        reg.insert("head.w1.w", Tensor::zeros(&[D, D]));
        reg.insert("head.w1.b", Tensor::zeros(&[D]));
        reg.insert("head.w2.w", Tensor::zeros(&[D, 3]));
        reg.insert(
            "head.w2.b",
            Tensor::new(vec![3], vec![1.5, -2.5, 0.25]),
        );
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, D], vec![0.3; D]));
        let out = mlp_head(&mut g, &reg, "head", x);
        assert_eq!(g.value(out).data, vec![1.5, -2.5, 0.25]);
    }
}
