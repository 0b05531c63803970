//! Adan and AdamW optimizers and the warmup-plus-cosine learning rate.

use fanerv_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Linear warmup over the first `warmup` fraction of steps, then cosine decay
/// from `lr0` to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, warmup: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    if step >= total_steps {
        return 0.0;
    }
    let w = (warmup * total_steps as f64).floor() as usize;
    if step < w {
        return lr0 * (step + 1) as f64 / w as f64;
    }
    let progress = (step - w) as f64 / (total_steps - w) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adan {
        beta1: f64,
        beta2: f64,
        beta3: f64,
        weight_decay: f64,
        eps: f64,
    },
    Adamw {
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn adan() -> Self {
        OptimizerConfig::Adan {
            beta1: 0.98,
            beta2: 0.92,
            beta3: 0.99,
            weight_decay: 0.02,
            eps: 1e-8,
        }
    }

    pub fn adamw() -> Self {
        OptimizerConfig::Adamw {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Adan { .. } => "adan",
            OptimizerConfig::Adamw { .. } => "adamw",
        }
    }

    pub fn with_weight_decay(self, wd: f64) -> Self {
        match self {
            OptimizerConfig::Adan {
                beta1,
                beta2,
                beta3,
                eps,
                ..
            } => OptimizerConfig::Adan {
                beta1,
                beta2,
                beta3,
                weight_decay: wd,
                eps,
            },
            OptimizerConfig::Adamw { beta1, beta2, eps, .. } => OptimizerConfig::Adamw {
                beta1,
                beta2,
                weight_decay: wd,
                eps,
            },
        }
    }
}

/// Per-tensor moment buffers. AdamW uses only `m` and `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slots<T> {
    pub m: Vec<T>,
    /// Adan: moment of gradient differences. AdamW: second moment.
    pub v: Vec<T>,
    pub n: Vec<T>,
    pub prev_grad: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Scalar> {
    pub config: OptimizerConfig,
    /// Applied steps.
    pub steps: u64,
    pub skipped: u64,
    pub slots: Vec<Slots<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<T>]) -> Self {
        let slots = params
            .iter()
            .map(|p| {
                let z = vec![T::zero(); p.numel()];
                let adan = matches!(config, OptimizerConfig::Adan { .. });
                Slots {
                    m: z.clone(),
                    v: z.clone(),
                    n: if adan { z.clone() } else { Vec::new() },
                    prev_grad: if adan { z } else { Vec::new() },
                }
            })
            .collect();
        Self {
            config,
            steps: 0,
            skipped: 0,
            slots,
        }
    }

    /// One update. Tensors whose gradient is `None` are left untouched. If
    /// any gradient is non-finite nothing changes and the step is counted as
    /// skipped.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<&Tensor<T>>], lr: f64) -> StepOutcome {
        assert_eq!(params.len(), self.slots.len(), "optimizer built for another parameter set");
        assert_eq!(params.len(), grads.len());
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            self.skipped += 1;
            log::warn!("non-finite gradient at step {}; update skipped", self.steps + 1);
            return StepOutcome::SkippedNonFinite;
        }
        self.steps += 1;
        let k = self.steps as i32;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let Some(g) = g else { continue };
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            match self.config {
                OptimizerConfig::Adan {
                    beta1,
                    beta2,
                    beta3,
                    weight_decay,
                    eps,
                } => adan_update(p.data_mut(), g.data(), s, k, lr, [beta1, beta2, beta3], weight_decay, eps),
                OptimizerConfig::Adamw {
                    beta1,
                    beta2,
                    weight_decay,
                    eps,
                } => adamw_update(p.data_mut(), g.data(), s, k, lr, [beta1, beta2], weight_decay, eps),
            }
        }
        StepOutcome::Applied
    }
}

#[allow(clippy::too_many_arguments)]
fn adan_update<T: Scalar>(
    p: &mut [T],
    g: &[T],
    s: &mut Slots<T>,
    k: i32,
    lr: f64,
    [b1, b2, b3]: [f64; 3],
    wd: f64,
    eps: f64,
) {
    let bc1 = 1.0 - b1.powi(k);
    let bc2 = 1.0 - b2.powi(k);
    let bc3 = (1.0 - b3.powi(k)).sqrt();
    let (tb1, tb2, tb3) = (T::of(b1), T::of(b2), T::of(b3));
    let (one, eps) = (T::one(), T::of(eps));
    let step1 = T::of(lr / bc1);
    let step2 = T::of(lr * b2 / bc2);
    let bc3 = T::of(bc3);
    let shrink = T::of(1.0 / (1.0 + lr * wd));
    for i in 0..p.len() {
        let gi = g[i];
        let diff = if k == 1 { T::zero() } else { gi - s.prev_grad[i] };
        s.m[i] = tb1 * s.m[i] + (one - tb1) * gi;
        s.v[i] = tb2 * s.v[i] + (one - tb2) * diff;
        let u = gi + tb2 * diff;
        s.n[i] = tb3 * s.n[i] + (one - tb3) * u * u;
        let denom = s.n[i].sqrt() / bc3 + eps;
        p[i] = (p[i] - step1 * s.m[i] / denom - step2 * s.v[i] / denom) * shrink;
        s.prev_grad[i] = gi;
    }
}

#[allow(clippy::too_many_arguments)]
fn adamw_update<T: Scalar>(
    p: &mut [T],
    g: &[T],
    s: &mut Slots<T>,
    k: i32,
    lr: f64,
    [b1, b2]: [f64; 2],
    wd: f64,
    eps: f64,
) {
    let bc1 = T::of(1.0 - b1.powi(k));
    let bc2 = T::of((1.0 - b2.powi(k)).sqrt());
    let (tb1, tb2, one) = (T::of(b1), T::of(b2), T::one());
    let decay = T::of(1.0 - lr * wd);
    let (lr, eps) = (T::of(lr), T::of(eps));
    for i in 0..p.len() {
        let gi = g[i];
        s.m[i] = tb1 * s.m[i] + (one - tb1) * gi;
        s.v[i] = tb2 * s.v[i] + (one - tb2) * gi * gi;
        let denom = s.v[i].sqrt() / bc2 + eps;
        p[i] = p[i] * decay - lr * (s.m[i] / bc1) / denom;
    }
}
