//! Parameter-update rules, learning-rate schedules, sharpness-aware wrappers
//! and weight averaging.

mod sam;
mod schedule;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamMap;

pub use sam::{sam_step, sam_step_model, SamConfig, SamVariant};
pub use schedule::{lr_at, preset, Preset, Schedule, ScheduleKind, PRESETS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        momentum: f32,
        nesterov: bool,
        weight_decay: f32,
    },
    #[serde(rename = "adamw")]
    AdamW {
        beta1: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    },
}

impl OptimizerConfig {
    pub fn sgd(momentum: f32, nesterov: bool, weight_decay: f32) -> Self {
        OptimizerConfig::Sgd { momentum, nesterov, weight_decay }
    }

    pub fn adamw(weight_decay: f32) -> Self {
        OptimizerConfig::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { momentum, weight_decay, .. } => (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerConfig::AdamW { beta1, beta2, eps, weight_decay } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: OptimizerConfig,
    /// Momentum (SGD) or first moment (AdamW).
    pub first: BTreeMap<String, Vec<f32>>,
    /// Second moment (AdamW only).
    pub second: BTreeMap<String, Vec<f32>>,
    pub step: u64,
    /// Parameters excluded from weight decay.
    pub no_decay: BTreeSet<String>,
}

impl OptimState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimState { config, first: BTreeMap::new(), second: BTreeMap::new(), step: 0, no_decay: BTreeSet::new() })
    }

    pub fn with_no_decay(mut self, names: impl IntoIterator<Item = String>) -> Self {
        self.no_decay.extend(names);
        self
    }

    /// Applies the configured rule with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap, lr: f32) -> Result<()> {
        match self.config {
            OptimizerConfig::Sgd { .. } => sgd_step(params, grads, self, lr),
            OptimizerConfig::AdamW { .. } => adamw_step(params, grads, self, lr),
        }
    }

    fn decay_for(&self, name: &str, wd: f32) -> f32 {
        if self.no_decay.contains(name) {
            0.0
        } else {
            wd
        }
    }
}

fn check_grads(params: &ParamMap, grads: &ParamMap) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ParamMismatch(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (name, p) in params {
        let g = grads.get(name).ok_or_else(|| Error::ParamMismatch(format!("missing gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient `{name}` {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
    }
    Ok(())
}

/// SGD with (optionally Nesterov) momentum and L2 weight decay added to the
/// gradient. The first step initializes the buffer to the gradient.
pub fn sgd_step(params: &mut ParamMap, grads: &ParamMap, state: &mut OptimState, lr: f32) -> Result<()> {
    let OptimizerConfig::Sgd { momentum, nesterov, weight_decay } = state.config else {
        return Err(Error::InvalidArgument("sgd_step needs an SGD optimizer state".into()));
    };
    check_grads(params, grads)?;
    let fresh = state.step == 0;
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let wd = state.decay_for(name, weight_decay);
        let buf = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
        if buf.len() != p.numel() {
            return Err(Error::Shape(format!("momentum buffer for `{name}` has {} values", buf.len())));
        }
        for ((w, &gi), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
            let d = gi + wd * *w;
            let mut upd = d;
            if momentum != 0.0 {
                *b = if fresh { d } else { momentum * *b + d };
                upd = if nesterov { d + momentum * *b } else { *b };
            }
            *w -= lr * upd;
        }
    }
    state.step += 1;
    Ok(())
}

/// AdamW: decoupled decay `w ← w·(1 − lr·wd)` followed by the bias-corrected
/// Adam update.
pub fn adamw_step(params: &mut ParamMap, grads: &ParamMap, state: &mut OptimState, lr: f32) -> Result<()> {
    let OptimizerConfig::AdamW { beta1, beta2, eps, weight_decay } = state.config else {
        return Err(Error::InvalidArgument("adamw_step needs an AdamW optimizer state".into()));
    };
    check_grads(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - (beta1 as f64).powi(t);
    let bc2 = 1.0 - (beta2 as f64).powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let wd = state.decay_for(name, weight_decay);
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w *= 1.0 - lr * wd;
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi as f64 / bc1;
            let vhat = *vi as f64 / bc2;
            *w -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
        }
    }
    Ok(())
}

/// `ema ← decay·ema + (1 − decay)·params`, elementwise.
pub fn ema_update(ema: &mut ParamMap, params: &ParamMap, decay: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("ema decay {decay} outside [0, 1]")));
    }
    check_grads(params, ema)?;
    for (name, e) in ema.iter_mut() {
        for (ev, &pv) in e.data_mut().iter_mut().zip(params[name].data()) {
            *ev = decay * *ev + (1.0 - decay) * pv;
        }
    }
    Ok(())
}
