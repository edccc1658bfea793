//! Dense f64 tensors and the named parameter registry.

use std::collections::HashMap;

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

/// Row-major dense tensor. Double precision everywhere; checkpoints narrow
/// to f32 on disk and parameter values are kept f32-representable so the
/// round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {shape:?} needs {numel} values, got {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Uniform values in [lo, hi), f32-snapped so checkpoints round-trip.
    pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let dist = Uniform::new(lo, hi);
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| dist.sample(rng) as f32 as f64).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Dimension i of the shape.
    #[inline]
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of named parameter tensors with accumulated
/// gradients. Iteration follows insertion order, so checkpoints and
/// optimizer traversals are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl ParamRegistry {
    pub fn new() -> ParamRegistry {
        ParamRegistry::default()
    }

    /// Register a parameter. Duplicate names are a wiring bug.
    pub fn insert(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(vec![0.0; value.numel()]);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name_of(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn grad(&self, id: usize) -> &[f64] {
        &self.grads[id]
    }

    pub fn grad_by_name(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.grads[i].as_slice())
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: usize, contribution: &[f64]) {
        let g = &mut self.grads[id];
        assert_eq!(g.len(), contribution.len());
        for (a, b) in g.iter_mut().zip(contribution) {
            *a += b;
        }
    }

    /// Scale every accumulated gradient, e.g. by 1/batch for mean loss.
    pub fn scale_grads(&mut self, s: f64) {
        for g in self.grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Pass every value through f32 so the on-disk f32 checkpoint encodes
    /// parameters exactly.
    pub fn quantize_f32(&mut self) {
        for t in self.values.iter_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// First parameter whose value or gradient holds a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        for (i, t) in self.values.iter().enumerate() {
            if !t.is_finite() || self.grads[i].iter().any(|v| !v.is_finite()) {
                return Some(&self.names[i]);
            }
        }
        None
    }
}
