//! Adam optimizer with the AMSGrad running-max variant, plus the warmup +
//! cosine-annealing learning-rate schedule.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::nn::Parameterized;

/// Hyper-parameters of the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<F> {
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Float> Default for AdamConfig<F> {
    fn default() -> Self {
        AdamConfig {
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            epsilon: F::from(1e-8).unwrap(),
        }
    }
}

/// Per-parameter moment buffers, addressed by visitation order.
#[derive(Debug, Clone)]
pub struct MomentSlot<F> {
    pub name: String,
    pub m: Vec<F>,
    pub v: Vec<F>,
    /// Element-wise running max of the bias-corrected second moment.
    /// Non-decreasing over the life of the optimizer.
    pub v_max: Vec<F>,
}

/// Adam with AMSGrad. The update is
///
/// `m̂ = m / (1 - β1ᵗ)`, `v̂ = v / (1 - β2ᵗ)`,
/// `v_max = max(v_max, v̂)`, `θ -= lr · m̂ / (sqrt(v_max) + ε)`.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig<F>,
    step: u64,
    slots: Vec<MomentSlot<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig<F>) -> Self {
        Adam {
            config,
            step: 0,
            slots: Vec::new(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &[MomentSlot<F>] {
        &self.slots
    }

    /// Restores optimizer state saved from a checkpoint. Slot order must
    /// match the model's parameter visitation order.
    pub fn restore(config: AdamConfig<F>, step: u64, slots: Vec<MomentSlot<F>>) -> Self {
        Adam {
            config,
            step,
            slots,
        }
    }

    /// Applies one update using the gradients accumulated in the model.
    /// Rejects non-finite gradients before touching any parameter, so a
    /// failed step leaves the model unchanged.
    pub fn step<M: Parameterized<F>>(&mut self, model: &mut M, lr: F) -> Result<()> {
        if lr <= F::zero() {
            return Err(CoreError::domain("learning rate must be positive"));
        }
        // First pass: validate gradients and lazily create moment slots.
        let mut bad: Option<String> = None;
        let first_step = self.slots.is_empty();
        {
            let slots = &mut self.slots;
            let mut idx = 0usize;
            model.for_each_param(&mut |name, p, g| {
                if first_step {
                    slots.push(MomentSlot {
                        name: name.to_string(),
                        m: vec![F::zero(); p.len()],
                        v: vec![F::zero(); p.len()],
                        v_max: vec![F::zero(); p.len()],
                    });
                }
                if bad.is_none() {
                    if idx >= slots.len() || slots[idx].m.len() != p.len() {
                        bad = Some(format!("optimizer state mismatch at parameter {name}"));
                    } else if g.iter().any(|v| !v.is_finite()) {
                        bad = Some(format!("non-finite gradient in {name}"));
                    }
                }
                idx += 1;
            });
            if bad.is_none() && idx != slots.len() {
                bad = Some("optimizer state has more slots than the model".to_string());
            }
        }
        if let Some(msg) = bad {
            return Err(CoreError::numeric(msg));
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let eps = self.config.epsilon;
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);

        let slots = &mut self.slots;
        let mut idx = 0usize;
        model.for_each_param(&mut |_, p, g| {
            let slot = &mut slots[idx];
            for i in 0..p.len() {
                let grad = g[i];
                slot.m[i] = b1 * slot.m[i] + (F::one() - b1) * grad;
                slot.v[i] = b2 * slot.v[i] + (F::one() - b2) * grad * grad;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                if v_hat > slot.v_max[i] {
                    slot.v_max[i] = v_hat;
                }
                p[i] = p[i] - lr * m_hat / (slot.v_max[i].sqrt() + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

/// Warmup-then-cosine learning-rate schedule.
///
/// Epochs before `warm_epochs` run at `base_rate`; from there the rate
/// anneals with a half cosine down to `min_rate` at `total_epochs`. With
/// `warm_epochs == total_epochs` the rate is constant at `base_rate` for
/// the whole run.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule<F> {
    pub base_rate: F,
    pub warm_epochs: usize,
    pub total_epochs: usize,
    pub min_rate: F,
}

impl<F: Float> LrSchedule<F> {
    pub fn new(base_rate: F, warm_epochs: usize, total_epochs: usize, min_rate: F) -> Result<Self> {
        if min_rate < F::zero() || min_rate > base_rate {
            return Err(CoreError::domain("need 0 <= min_rate <= base_rate"));
        }
        if warm_epochs > total_epochs {
            return Err(CoreError::domain("warm_epochs must not exceed total_epochs"));
        }
        Ok(LrSchedule {
            base_rate,
            warm_epochs,
            total_epochs,
            min_rate,
        })
    }

    /// Constant schedule at `base_rate`.
    pub fn constant(base_rate: F, total_epochs: usize) -> Self {
        LrSchedule {
            base_rate,
            warm_epochs: total_epochs,
            total_epochs,
            min_rate: base_rate,
        }
    }

    /// Learning rate for `epoch` (0-based, valid through `total_epochs`).
    pub fn lr_at(&self, epoch: usize) -> Result<F> {
        if epoch > self.total_epochs {
            return Err(CoreError::domain(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        if epoch < self.warm_epochs {
            return Ok(self.base_rate);
        }
        if self.total_epochs == self.warm_epochs {
            // Degenerate annealing span; the only in-range epoch is the end.
            return Ok(if epoch == self.total_epochs && epoch > 0 {
                self.min_rate
            } else {
                self.base_rate
            });
        }
        let span = (self.total_epochs - self.warm_epochs) as f64;
        let pos = (epoch - self.warm_epochs) as f64;
        let cos = (core::f64::consts::PI * pos / span).cos();
        let half = F::from(0.5 * (1.0 + cos)).unwrap();
        Ok(self.min_rate + (self.base_rate - self.min_rate) * half)
    }
}
