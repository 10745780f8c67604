use std::fmt;
use std::str::FromStr;

use autodiff::{ParamStore, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("optimizer must be adam or sgd, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 10,
            grad_clip_norm: Some(5.0),
            seed: 0,
            early_stop_patience: 3,
            validation_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted: it freezes the model, which is how the
    /// constant-metrics check is run.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip_norm must be positive".into()));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Moment buffers aligned with the parameter store's (name-sorted) order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        match kind {
            OptimizerKind::Adam => OptimizerState { kind, step: 0, first: zeros(), second: zeros() },
            OptimizerKind::Sgd => OptimizerState { kind, step: 0, first: Vec::new(), second: Vec::new() },
        }
    }

    fn check(&self, params: &ParamStore<T>) -> Result<()> {
        let sizes: Vec<usize> = params.iter().map(|p| p.tensor.numel()).collect();
        for bufs in [&self.first, &self.second] {
            let ok = bufs.len() == sizes.len() && bufs.iter().zip(&sizes).all(|(b, &n)| b.len() == n);
            if !ok {
                return Err(Error::InvalidData("optimizer state does not match parameter shapes".into()));
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when already within bounds).
pub fn clip_gradients<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        params.scale_grads(T::of(scale));
        scale
    } else {
        1.0
    }
}

/// One bias-corrected Adam update, then pinned rows are re-zeroed.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if state.kind != OptimizerKind::Adam {
        return Err(Error::Config("adam_step on a non-adam optimizer state".into()));
    }
    state.check(params)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(betas.0), T::of(betas.1));
    let (one_b1, one_b2) = (T::of(1.0 - betas.0), T::of(1.0 - betas.1));
    let bc1 = T::of(1.0 - betas.0.powi(t));
    let bc2 = T::of(1.0 - betas.1.powi(t));
    let (lr, eps) = (T::of(lr), T::of(eps));
    for (i, p) in params.iter_mut().enumerate() {
        let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            let delta = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            if delta != T::zero() {
                *w = *w - delta;
            }
        }
    }
    params.enforce_pinned();
    Ok(())
}

pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    state.step += 1;
    let lr = T::of(lr);
    for p in params.iter_mut() {
        let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
        for (w, g) in p.tensor.data_mut().iter_mut().zip(grad) {
            let delta = lr * g;
            if delta != T::zero() {
                *w = *w - delta;
            }
        }
    }
    params.enforce_pinned();
    Ok(())
}

pub fn optimizer_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>, cfg: &TrainConfig) -> Result<()> {
    match state.kind {
        OptimizerKind::Adam => adam_step(params, state, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps),
        OptimizerKind::Sgd => sgd_step(params, state, cfg.lr),
    }
}
