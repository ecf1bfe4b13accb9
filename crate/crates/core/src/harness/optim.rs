use super::{HarnessError, Result};
use crate::model::ParameterStore;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to matrices (rank ≥ 2) only.
    pub weight_decay: f64,
    /// Linear warmup length in applied steps; 0 disables it.
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1, warmup: 100, clip: 1.0 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Learning rate for the `t`-th applied step (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * (t as f64 / self.warmup as f64).min(1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    /// Applied steps.
    pub t: u64,
    /// Steps skipped for non-finite gradients.
    pub skipped: u64,
}

impl AdamWState {
    pub fn new(params: &ParameterStore<f32>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { m: zeros(), v: zeros(), t: 0, skipped: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub applied: bool,
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

/// One AdamW update: global-norm clipping, bias-corrected moments, then
/// decoupled weight decay. A non-finite gradient skips the step.
pub fn optimizer_step(
    params: &mut ParameterStore<f32>,
    grads: &[Tensor<f32>],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<StepInfo> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(HarnessError::Config(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (g, p) in grads.iter().zip(params.tensors()) {
        if g.shape() != p.shape() {
            return Err(HarnessError::Config(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
        }
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| x as f64 * x as f64)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        state.skipped += 1;
        return Ok(StepInfo { applied: false, grad_norm: norm, lr: 0.0 });
    }
    let scale = if cfg.clip > 0.0 && norm > cfg.clip { cfg.clip / norm } else { 1.0 };
    state.t += 1;
    let t = state.t as i32;
    let lr = cfg.lr_at(state.t);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let step = (lr / bc1) as f32;
    let inv_bc2 = (1.0 / bc2) as f32;
    let eps = cfg.eps as f32;
    let scale = scale as f32;
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let decay = if p.rank() >= 2 { (1.0 - lr * cfg.weight_decay) as f32 } else { 1.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g * scale;
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *w = *w * decay - step * *mi / ((*vi * inv_bc2).sqrt() + eps);
        }
    }
    Ok(StepInfo { applied: true, grad_norm: norm, lr })
}
