//! Tape-based reverse-mode automatic differentiation.
//!
//! A `Graph` records one forward computation as a flat tape of nodes whose
//! parents always precede them. `backward` walks the tape in reverse,
//! propagating gradients into per-node scratch buffers and accumulating the
//! results of parameter leaves into the `ParamRegistry`. Shape mismatches
//! are wiring bugs and panic with both shapes in the message.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{ParamRegistry, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow { mat: NodeId, row: NodeId },
    Scale { x: NodeId, c: f64 },
    ScaleRows { x: NodeId, w: Vec<f64> },
    Matmul { a: NodeId, b: NodeId },
    Bmm { a: NodeId, b: NodeId },
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SoftmaxLast(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    ConcatLast { a: NodeId, b: NodeId },
    Reshape { x: NodeId },
    Transpose2 { x: NodeId },
    Permute102 { x: NodeId },
    TransposeLast2 { x: NodeId },
    GatherRows { x: NodeId, idx: Vec<usize> },
    MaxMid { x: NodeId, argmax: Vec<usize> },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.numel(), 1, "expected scalar, got shape {:?}", t.shape);
        t.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a registry parameter; its gradient accumulates into
    /// the registry on backward.
    pub fn param(&mut self, registry: &ParamRegistry, name: &str) -> NodeId {
        let pid = registry
            .id_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        let id = self.push(registry.value(pid).clone(), Op::Leaf, true);
        self.nodes[id.0].param = Some(pid);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            ta.shape, tb.shape,
            "add shape mismatch: {:?} vs {:?}",
            ta.shape, tb.shape
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            ta.shape, tb.shape,
            "sub shape mismatch: {:?} vs {:?}",
            ta.shape, tb.shape
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            ta.shape, tb.shape,
            "mul shape mismatch: {:?} vs {:?}",
            ta.shape, tb.shape
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    /// Broadcast-add a row vector to every row of a matrix.
    pub fn add_row(&mut self, mat: NodeId, row: NodeId) -> NodeId {
        let (tm, tr) = (&self.nodes[mat.0].value, &self.nodes[row.0].value);
        assert!(
            tm.rank() == 2 && tr.rank() == 1 && tm.shape[1] == tr.shape[0],
            "add_row shape mismatch: {:?} vs {:?}",
            tm.shape,
            tr.shape
        );
        let (n, d) = (tm.shape[0], tm.shape[1]);
        let mut data = tm.data.clone();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += tr.data[j];
            }
        }
        let t = Tensor::new(tm.shape.clone(), data);
        let rg = self.needs(mat) || self.needs(row);
        self.push(t, Op::AddRow { mat, row }, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| v * c).collect();
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::Scale { x, c }, rg)
    }

    /// Multiply row i of a matrix by the constant weight w[i].
    pub fn scale_rows(&mut self, x: NodeId, w: Vec<f64>) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(
            tx.rank() == 2 && tx.shape[0] == w.len(),
            "scale_rows needs {:?} rows, got {} weights",
            tx.shape,
            w.len()
        );
        let d = tx.shape[1];
        let mut data = tx.data.clone();
        for (i, &wi) in w.iter().enumerate() {
            for v in data[i * d..(i + 1) * d].iter_mut() {
                *v *= wi;
            }
        }
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::ScaleRows { x, w }, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
            "matmul shape mismatch: {:?} x {:?}",
            ta.shape,
            tb.shape
        );
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        mm_accum(&ta.data, &tb.data, m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Matmul { a, b }, rg)
    }

    /// Batched matmul over the leading axis: [h,n,k] x [h,k,m] -> [h,n,m].
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.rank() == 3
                && tb.rank() == 3
                && ta.shape[0] == tb.shape[0]
                && ta.shape[2] == tb.shape[1],
            "bmm shape mismatch: {:?} x {:?}",
            ta.shape,
            tb.shape
        );
        let (h, n, k, m) = (ta.shape[0], ta.shape[1], ta.shape[2], tb.shape[2]);
        let mut out = vec![0.0; h * n * m];
        for s in 0..h {
            mm_accum(
                &ta.data[s * n * k..(s + 1) * n * k],
                &tb.data[s * k * m..(s + 1) * k * m],
                n,
                k,
                m,
                &mut out[s * n * m..(s + 1) * n * m],
            );
        }
        let t = Tensor::new(vec![h, n, m], out);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Bmm { a, b }, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| v.abs()).collect();
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::Abs(x), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| v.exp()).collect();
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::Exp(x), rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let s: f64 = tx.data.iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Softmax over the last axis, numerically stabilized by the row max.
    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let d = *tx.shape.last().expect("softmax needs rank >= 1");
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::SoftmaxLast(x), rg)
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        let d = *tx.shape.last().expect("layer_norm needs rank >= 1");
        assert!(
            tg.shape == [d] && tb.shape == [d],
            "layer_norm affine shape mismatch: x {:?}, gamma {:?}, beta {:?}",
            tx.shape,
            tg.shape,
            tb.shape
        );
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = tg.data[j] * ((*v - mean) * inv) + tb.data[j];
            }
        }
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(t, Op::LayerNorm { x, gamma, beta }, rg)
    }

    /// Inverted dropout: training keeps values with probability 1-rate and
    /// scales them by 1/(1-rate); eval mode is the identity (no node).
    pub fn dropout(&mut self, x: NodeId, rate: f64, train: bool, rng: &mut ChaCha8Rng) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} not in [0,1)");
        if !train || rate == 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let tx = &self.nodes[x.0].value;
        let mask: Vec<f64> = (0..tx.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = tx.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape.clone(), data);
        let rg = self.needs(x);
        self.push(t, Op::Dropout { x, mask }, rg)
    }

    /// Concatenate along the last axis; leading dimensions must match.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.rank() == tb.rank()
                && ta.shape[..ta.rank() - 1] == tb.shape[..tb.rank() - 1],
            "concat_last shape mismatch: {:?} vs {:?}",
            ta.shape,
            tb.shape
        );
        let (da, db) = (*ta.shape.last().unwrap(), *tb.shape.last().unwrap());
        let rows = ta.numel() / da;
        let mut data = Vec::with_capacity(rows * (da + db));
        for i in 0..rows {
            data.extend_from_slice(&ta.data[i * da..(i + 1) * da]);
            data.extend_from_slice(&tb.data[i * db..(i + 1) * db]);
        }
        let mut shape = ta.shape.clone();
        *shape.last_mut().unwrap() = da + db;
        let t = Tensor::new(shape, data);
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::ConcatLast { a, b }, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            tx.numel(),
            "reshape {:?} -> {:?} changes element count",
            tx.shape,
            shape
        );
        let t = Tensor::new(shape, tx.data.clone());
        let rg = self.needs(x);
        self.push(t, Op::Reshape { x }, rg)
    }

    pub fn transpose2(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(tx.rank() == 2, "transpose2 needs rank 2, got {:?}", tx.shape);
        let (m, n) = (tx.shape[0], tx.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = tx.data[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data);
        let rg = self.needs(x);
        self.push(t, Op::Transpose2 { x }, rg)
    }

    /// Swap the first two axes of a rank-3 tensor: [a,b,c] -> [b,a,c].
    pub fn permute102(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(tx.rank() == 3, "permute102 needs rank 3, got {:?}", tx.shape);
        let (a, b, c) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let mut data = vec![0.0; a * b * c];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * c;
                let dst = (j * a + i) * c;
                data[dst..dst + c].copy_from_slice(&tx.data[src..src + c]);
            }
        }
        let t = Tensor::new(vec![b, a, c], data);
        let rg = self.needs(x);
        self.push(t, Op::Permute102 { x }, rg)
    }

    /// Swap the last two axes of a rank-3 tensor: [h,n,m] -> [h,m,n].
    pub fn transpose_last2(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(
            tx.rank() == 3,
            "transpose_last2 needs rank 3, got {:?}",
            tx.shape
        );
        let (h, n, m) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let mut data = vec![0.0; h * n * m];
        for s in 0..h {
            for i in 0..n {
                for j in 0..m {
                    data[(s * m + j) * n + i] = tx.data[(s * n + i) * m + j];
                }
            }
        }
        let t = Tensor::new(vec![h, m, n], data);
        let rg = self.needs(x);
        self.push(t, Op::TransposeLast2 { x }, rg)
    }

    /// Select rows of a matrix; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(tx.rank() == 2, "gather_rows needs rank 2, got {:?}", tx.shape);
        let (n, d) = (tx.shape[0], tx.shape[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            assert!(i < n, "gather index {i} out of {n} rows");
            data.extend_from_slice(&tx.data[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![idx.len(), d], data);
        let rg = self.needs(x);
        self.push(t, Op::GatherRows { x, idx }, rg)
    }

    /// Learned-table lookup; alias for row gathering on the table.
    pub fn embedding_lookup(&mut self, table: NodeId, idx: Vec<usize>) -> NodeId {
        self.gather_rows(table, idx)
    }

    /// Max over the middle axis: [g,k,d] -> [g,d]. Gradient routes to the
    /// argmax element of each (group, channel).
    pub fn max_mid(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        assert!(tx.rank() == 3, "max_mid needs rank 3, got {:?}", tx.shape);
        let (g, k, d) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        assert!(k >= 1, "max_mid needs at least one element, got {:?}", tx.shape);
        let mut data = vec![f64::NEG_INFINITY; g * d];
        let mut argmax = vec![0usize; g * d];
        for gi in 0..g {
            for ki in 0..k {
                let base = (gi * k + ki) * d;
                for j in 0..d {
                    let v = tx.data[base + j];
                    if v > data[gi * d + j] {
                        data[gi * d + j] = v;
                        argmax[gi * d + j] = ki;
                    }
                }
            }
        }
        let t = Tensor::new(vec![g, d], data);
        let rg = self.needs(x);
        self.push(t, Op::MaxMid { x, argmax }, rg)
    }

    /// 2D convolution with zero padding: x [C_in,H,W], w [C_out,C_in,kh,kw],
    /// optional bias [C_out].
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        assert!(
            tx.rank() == 3 && tw.rank() == 4 && tx.shape[0] == tw.shape[1],
            "conv2d shape mismatch: x {:?}, w {:?}",
            tx.shape,
            tw.shape
        );
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let (ci, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let (co, _, kh, kw) = (tw.shape[0], tw.shape[1], tw.shape[2], tw.shape[3]);
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d kernel {:?} exceeds padded input {:?}",
            tw.shape,
            tx.shape
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        conv_forward(
            &tx.data, &tw.data, ci, h, wd, co, kh, kw, stride, pad, ho, wo, &mut out,
        );
        if let Some(bid) = b {
            let tb = &self.nodes[bid.0].value;
            assert!(
                tb.shape == [co],
                "conv bias shape mismatch: {:?} for {co} output channels",
                tb.shape
            );
            for c in 0..co {
                for v in out[c * ho * wo..(c + 1) * ho * wo].iter_mut() {
                    *v += tb.data[c];
                }
            }
        }
        let t = Tensor::new(vec![co, ho, wo], out);
        let rg =
            self.needs(x) || self.needs(w) || b.map(|bb| self.needs(bb)).unwrap_or(false);
        self.push(t, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    /// Affine layer: x [n,in] * w [in,out] + bias [out].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Scaled dot-product attention over pre-projected Q [nq,d], K [nk,d],
    /// V [nk,d], split into `heads` heads. Returns [nq,d].
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (tq, tk, tv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        assert!(
            tq.rank() == 2 && tk.rank() == 2 && tv.rank() == 2,
            "attention needs rank-2 Q/K/V: {:?}, {:?}, {:?}",
            tq.shape,
            tk.shape,
            tv.shape
        );
        let (nq, d) = (tq.shape[0], tq.shape[1]);
        let nk = tk.shape[0];
        assert!(
            tk.shape[1] == d && tv.shape == [nk, d],
            "attention K/V shape mismatch: Q {:?}, K {:?}, V {:?}",
            tq.shape,
            tk.shape,
            tv.shape
        );
        assert!(
            d % heads == 0,
            "attention width {d} not divisible by {heads} heads"
        );
        let dh = d / heads;
        let qr = self.reshape(q, vec![nq, heads, dh]);
        let qh = self.permute102(qr);
        let kr = self.reshape(k, vec![nk, heads, dh]);
        let kh = self.permute102(kr);
        let vr = self.reshape(v, vec![nk, heads, dh]);
        let vh = self.permute102(vr);
        let kt = self.transpose_last2(kh);
        let logits = self.bmm(qh, kt);
        let scaled = self.scale(logits, 1.0 / (dh as f64).sqrt());
        let attn = self.softmax_last(scaled);
        let ctx = self.bmm(attn, vh);
        let merged = self.permute102(ctx);
        self.reshape(merged, vec![nq, d])
    }

    /// Reverse-mode gradient of a scalar root. Parameter gradients are
    /// accumulated (not overwritten) into the registry, so repeated calls
    /// add up.
    pub fn backward(&self, root: NodeId, registry: &mut ParamRegistry) {
        let root_node = &self.nodes[root.0];
        assert_eq!(
            root_node.value.numel(),
            1,
            "backward root must be scalar, got shape {:?}",
            root_node.value.shape
        );
        if !root_node.requires_grad {
            return;
        }
        let mut scratch: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad.then(|| vec![0.0; n.value.numel()]))
            .collect();
        scratch[root.0].as_mut().unwrap()[0] = 1.0;

        for i in (0..=root.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            if let Some(pid) = self.nodes[i].param {
                registry.accumulate_grad(pid, &g);
            }
            self.propagate(i, &g, &mut scratch);
        }
    }

    fn propagate(&self, i: usize, g: &[f64], scratch: &mut [Option<Vec<f64>>]) {
        let value = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = scratch[a.0].as_mut() {
                    axpy(1.0, g, da);
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    axpy(1.0, g, db);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = scratch[a.0].as_mut() {
                    axpy(1.0, g, da);
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    axpy(-1.0, g, db);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = scratch[a.0].as_mut() {
                    let tb = &self.nodes[b.0].value.data;
                    for (k, dv) in da.iter_mut().enumerate() {
                        *dv += g[k] * tb[k];
                    }
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    let ta = &self.nodes[a.0].value.data;
                    for (k, dv) in db.iter_mut().enumerate() {
                        *dv += g[k] * ta[k];
                    }
                }
            }
            Op::AddRow { mat, row } => {
                if let Some(dm) = scratch[mat.0].as_mut() {
                    axpy(1.0, g, dm);
                }
                if let Some(dr) = scratch[row.0].as_mut() {
                    let d = dr.len();
                    for chunk in g.chunks_exact(d) {
                        for (j, v) in chunk.iter().enumerate() {
                            dr[j] += v;
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    axpy(*c, g, dx);
                }
            }
            Op::ScaleRows { x, w } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let d = dx.len() / w.len();
                    for (i, &wi) in w.iter().enumerate() {
                        for j in 0..d {
                            dx[i * d + j] += wi * g[i * d + j];
                        }
                    }
                }
            }
            Op::Matmul { a, b } => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if let Some(da) = scratch[a.0].as_mut() {
                    mm_accum_gc_bt(g, &tb.data, m, k, n, da);
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    mm_accum_at_gc(&ta.data, g, m, k, n, db);
                }
            }
            Op::Bmm { a, b } => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (h, n, k, m) = (ta.shape[0], ta.shape[1], ta.shape[2], tb.shape[2]);
                if let Some(da) = scratch[a.0].as_mut() {
                    for s in 0..h {
                        mm_accum_gc_bt(
                            &g[s * n * m..(s + 1) * n * m],
                            &tb.data[s * k * m..(s + 1) * k * m],
                            n,
                            k,
                            m,
                            &mut da[s * n * k..(s + 1) * n * k],
                        );
                    }
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    for s in 0..h {
                        mm_accum_at_gc(
                            &ta.data[s * n * k..(s + 1) * n * k],
                            &g[s * n * m..(s + 1) * n * m],
                            n,
                            k,
                            m,
                            &mut db[s * k * m..(s + 1) * k * m],
                        );
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let tx = &self.nodes[x.0].value.data;
                    for (k, dv) in dx.iter_mut().enumerate() {
                        if tx[k] > 0.0 {
                            *dv += g[k];
                        }
                    }
                }
            }
            Op::Abs(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let tx = &self.nodes[x.0].value.data;
                    for (k, dv) in dx.iter_mut().enumerate() {
                        *dv += g[k] * sign(tx[k]);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    for (k, dv) in dx.iter_mut().enumerate() {
                        *dv += g[k] * value.data[k];
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    for dv in dx.iter_mut() {
                        *dv += g[0];
                    }
                }
            }
            Op::MeanAll(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let inv = 1.0 / dx.len() as f64;
                    for dv in dx.iter_mut() {
                        *dv += g[0] * inv;
                    }
                }
            }
            Op::SoftmaxLast(x) => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let d = *value.shape.last().unwrap();
                    let y = &value.data;
                    for r in 0..y.len() / d {
                        let base = r * d;
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += g[base + j] * y[base + j];
                        }
                        for j in 0..d {
                            dx[base + j] += y[base + j] * (g[base + j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let tx = &self.nodes[x.0].value;
                let tg = &self.nodes[gamma.0].value;
                let d = *tx.shape.last().unwrap();
                let rows = tx.numel() / d;
                for r in 0..rows {
                    let base = r * d;
                    let row = &tx.data[base..base + d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    // dxhat = g * gamma; dx = inv * (dxhat - mean(dxhat)
                    //                                - xhat * mean(dxhat * xhat))
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxh = g[base + j] * tg.data[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat;
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    if let Some(dx) = scratch[x.0].as_mut() {
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv;
                            let dxh = g[base + j] * tg.data[j];
                            dx[base + j] += inv * (dxh - mean_dxh - xhat * mean_dxh_xh);
                        }
                    }
                    if let Some(dg) = scratch[gamma.0].as_mut() {
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv;
                            dg[j] += g[base + j] * xhat;
                        }
                    }
                    if let Some(db) = scratch[beta.0].as_mut() {
                        for j in 0..d {
                            db[j] += g[base + j];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    for (k, dv) in dx.iter_mut().enumerate() {
                        *dv += g[k] * mask[k];
                    }
                }
            }
            Op::ConcatLast { a, b } => {
                let da_w = *self.nodes[a.0].value.shape.last().unwrap();
                let db_w = *self.nodes[b.0].value.shape.last().unwrap();
                let rows = value.numel() / (da_w + db_w);
                if let Some(da) = scratch[a.0].as_mut() {
                    for r in 0..rows {
                        for j in 0..da_w {
                            da[r * da_w + j] += g[r * (da_w + db_w) + j];
                        }
                    }
                }
                if let Some(db) = scratch[b.0].as_mut() {
                    for r in 0..rows {
                        for j in 0..db_w {
                            db[r * db_w + j] += g[r * (da_w + db_w) + da_w + j];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    axpy(1.0, g, dx);
                }
            }
            Op::Transpose2 { x } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let (n, m) = (value.shape[0], value.shape[1]);
                    for i in 0..n {
                        for j in 0..m {
                            dx[j * n + i] += g[i * m + j];
                        }
                    }
                }
            }
            Op::Permute102 { x } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let (b, a, c) = (value.shape[0], value.shape[1], value.shape[2]);
                    for j in 0..b {
                        for i in 0..a {
                            let src = (j * a + i) * c;
                            let dst = (i * b + j) * c;
                            for t in 0..c {
                                dx[dst + t] += g[src + t];
                            }
                        }
                    }
                }
            }
            Op::TransposeLast2 { x } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let (h, m, n) = (value.shape[0], value.shape[1], value.shape[2]);
                    for s in 0..h {
                        for j in 0..m {
                            for i in 0..n {
                                dx[(s * n + i) * m + j] += g[(s * m + j) * n + i];
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let d = value.shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            dx[i * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::MaxMid { x, argmax } => {
                if let Some(dx) = scratch[x.0].as_mut() {
                    let (gn, d) = (value.shape[0], value.shape[1]);
                    let k = self.nodes[x.0].value.shape[1];
                    for gi in 0..gn {
                        for j in 0..d {
                            let ki = argmax[gi * d + j];
                            dx[(gi * k + ki) * d + j] += g[gi * d + j];
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let tx = &self.nodes[x.0].value;
                let tw = &self.nodes[w.0].value;
                let (ci, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                let (co, kh, kw) = (tw.shape[0], tw.shape[2], tw.shape[3]);
                let (ho, wo) = (value.shape[1], value.shape[2]);
                if let Some(bid) = b {
                    if let Some(db) = scratch[bid.0].as_mut() {
                        for c in 0..co {
                            db[c] += g[c * ho * wo..(c + 1) * ho * wo].iter().sum::<f64>();
                        }
                    }
                }
                let want_dx = scratch[x.0].is_some();
                let want_dw = scratch[w.0].is_some();
                if !want_dx && !want_dw {
                    return;
                }
                // Accumulate into local buffers first so the two scratch
                // entries can be written without overlapping borrows.
                let mut dx_buf = want_dx.then(|| vec![0.0; tx.numel()]);
                let mut dw_buf = want_dw.then(|| vec![0.0; tw.numel()]);
                conv_backward(
                    &tx.data,
                    &tw.data,
                    g,
                    ci,
                    h,
                    wd,
                    co,
                    kh,
                    kw,
                    *stride,
                    *pad,
                    ho,
                    wo,
                    dx_buf.as_deref_mut(),
                    dw_buf.as_deref_mut(),
                );
                if let (Some(buf), Some(dx)) = (dx_buf, scratch[x.0].as_mut()) {
                    axpy(1.0, &buf, dx);
                }
                if let (Some(buf), Some(dw)) = (dw_buf, scratch[w.0].as_mut()) {
                    axpy(1.0, &buf, dw);
                }
            }
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn axpy(c: f64, src: &[f64], dst: &mut [f64]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// C += A B with A [m,k], B [k,n], row-major.
fn mm_accum(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// dA += G B^T with G [m,n], B [k,n].
fn mm_accum_gc_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += grow[j] * brow[j];
            }
            da[i * k + p] += s;
        }
    }
}

/// dB += A^T G with A [m,k], G [m,n].
fn mm_accum_at_gc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                dbrow[j] += av * grow[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    for o in 0..co {
        for c in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w[((o * ci + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = oy * stride + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let xrow = &x[(c * h + iy - pad) * wd..(c * h + iy - pad + 1) * wd];
                        let orow = &mut out[(o * ho + oy) * wo..(o * ho + oy + 1) * wo];
                        for (ox, ov) in orow.iter_mut().enumerate() {
                            let ix = ox * stride + kx;
                            if ix >= pad && ix - pad < wd {
                                *ov += wv * xrow[ix - pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    for o in 0..co {
        for c in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((o * ci + c) * kh + ky) * kw + kx;
                    let wv = w[widx];
                    let mut dwv = 0.0;
                    for oy in 0..ho {
                        let iy = oy * stride + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let xbase = (c * h + iy - pad) * wd;
                        let gbase = (o * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = ox * stride + kx;
                            if ix < pad || ix - pad >= wd {
                                continue;
                            }
                            let gv = g[gbase + ox];
                            dwv += x[xbase + ix - pad] * gv;
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xbase + ix - pad] += wv * gv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += dwv;
                    }
                }
            }
        }
    }
}
