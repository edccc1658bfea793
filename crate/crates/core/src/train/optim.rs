//! Adam with L2-coupled weight decay and the step learning-rate schedule.

use crate::diff::ParamRegistry;

/// Classic Adam. Weight decay is coupled: it is added to the gradient
/// before the moment updates. Parameters under the loss. prefix (the two
/// learned temperatures) are exempt from decay. Updated values pass
/// through f32 so checkpoints encode them exactly.
#[derive(Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    exempt: Vec<bool>,
}

impl Adam {
    pub fn new(reg: &ParamRegistry, weight_decay: f64) -> Adam {
        let mut m = Vec::with_capacity(reg.len());
        let mut v = Vec::with_capacity(reg.len());
        let mut exempt = Vec::with_capacity(reg.len());
        for id in 0..reg.len() {
            let n = reg.value(id).numel();
            m.push(vec![0.0; n]);
            v.push(vec![0.0; n]);
            exempt.push(reg.name_of(id).starts_with("loss."));
        }
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            m,
            v,
            exempt,
        }
    }

    /// Apply one update from the gradients accumulated in the registry.
    pub fn step(&mut self, reg: &mut ParamRegistry, lr: f64) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for id in 0..reg.len() {
            let decay = if self.exempt[id] { 0.0 } else { self.weight_decay };
            let grads: Vec<f64> = reg.grad(id).to_vec();
            let value = &mut reg.value_mut(id).data;
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            for i in 0..value.len() {
                let g = grads[i] + decay * value[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let next = value[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
                value[i] = next as f32 as f64;
            }
        }
    }
}

/// lr = initial · factor^floor(epoch / period).
pub fn step_lr(epoch: usize, initial: f64, period: usize, factor: f64) -> f64 {
    initial * factor.powi((epoch / period) as i32)
}
