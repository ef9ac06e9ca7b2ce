use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Gradients, Param, ParameterStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` iterations.
    Step { factor: f64, every: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: u64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}

impl SgdConfig {
    pub fn new(lr: f64, batch_size: usize, iterations: u64) -> Self {
        SgdConfig {
            lr,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size,
            iterations,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if let LrSchedule::Step { factor, every } = self.schedule {
            if !(factor > 0.0) || every == 0 {
                return bad("step schedule needs factor > 0 and every > 0".into());
            }
        }
        Ok(())
    }

    /// Learning rate in effect at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step { factor, every } => self.lr * factor.powi((iter / every) as i32),
        }
    }
}

/// One heavy-ball update of every trainable tensor:
/// `v ← μ·v − lr·(g + wd·θ)`, `θ ← θ + v`.
pub fn sgd_step<T: Real>(store: &mut ParameterStore<T>, grads: &Gradients<T>, sgd: &SgdConfig, lr: f64) -> Result<()> {
    sgd_step_scaled(store, grads, sgd, lr, |_| 1.0)
}

/// Like [`sgd_step`] with the rate of each tensor multiplied by `scale`.
/// Nothing is updated if any trainable gradient is non-finite.
pub fn sgd_step_scaled<T: Real>(
    store: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    sgd: &SgdConfig,
    lr: f64,
    scale: impl Fn(&Param<T>) -> f64,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for (k, p) in store.params().iter().enumerate() {
        let g = grads.get(k);
        if g.shape() != p.value.shape() {
            return Err(Error::shape("sgd_step", p.value.dims(), g.dims()));
        }
        if store.is_trainable(k) && !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                max_abs: g.max_abs(),
            });
        }
    }
    let trainable: Vec<bool> = (0..store.len()).map(|k| store.is_trainable(k)).collect();
    let mu = T::of(sgd.momentum);
    let wd = T::of(sgd.weight_decay);
    for (k, p) in store.params_mut().iter_mut().enumerate() {
        if !trainable[k] {
            continue;
        }
        let rate = T::of(lr * scale(p));
        let g = grads.get(k).data();
        let Param { value, velocity, .. } = p;
        for ((theta, v), &gi) in value.data_mut().iter_mut().zip(velocity.data_mut()).zip(g) {
            *v = mu * *v - rate * (gi + wd * *theta);
            *theta += *v;
        }
    }
    Ok(())
}
