//! Learning-rate schedules and the named training recipes.

use serde::{Deserialize, Serialize};

use super::OptimizerConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// Multiply by `gamma` at each milestone epoch.
    StepDecay { milestones: Vec<usize>, gamma: f64 },
    /// Half-cosine from `base_lr` after warmup down to 0 at `total_epochs`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: usize,
    /// Optimizer steps per epoch, for sub-epoch interpolation.
    pub steps_per_epoch: usize,
}

impl Schedule {
    pub fn constant(lr: f64, epochs: usize) -> Self {
        Schedule {
            kind: ScheduleKind::StepDecay { milestones: vec![], gamma: 1.0 },
            base_lr: lr,
            warmup_epochs: 0.0,
            total_epochs: epochs,
            steps_per_epoch: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(self.warmup_epochs >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid schedule {self:?}")));
        }
        if let ScheduleKind::StepDecay { gamma, .. } = self.kind {
            if !(gamma >= 0.0) {
                return Err(Error::InvalidArgument(format!("decay factor {gamma} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Learning rate at `step_in_epoch` of `epoch` (0-based): linear warmup from
/// 0, then step decay or cosine annealing.
pub fn lr_at(schedule: &Schedule, epoch: usize, step_in_epoch: usize) -> f64 {
    let t = epoch as f64 + step_in_epoch as f64 / schedule.steps_per_epoch.max(1) as f64;
    if t < schedule.warmup_epochs {
        return schedule.base_lr * t / schedule.warmup_epochs;
    }
    match &schedule.kind {
        ScheduleKind::StepDecay { milestones, gamma } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            schedule.base_lr * gamma.powi(passed as i32)
        }
        ScheduleKind::Cosine => {
            let span = schedule.total_epochs as f64 - schedule.warmup_epochs;
            if span <= 0.0 {
                return 0.0;
            }
            let progress = ((t - schedule.warmup_epochs) / span).min(1.0);
            let lr = schedule.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            lr.max(0.0)
        }
    }
}

/// A named optimizer + schedule recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub label_smoothing: f32,
    pub ema_decay: Option<f32>,
}

pub const PRESETS: [&str; 2] = ["cnn-90ep", "vit-300ep"];

/// Builds a preset, optionally compressed to `epochs` (milestones and warmup
/// scale proportionally).
pub fn preset(name: &str, epochs: Option<usize>) -> Result<Preset> {
    match name {
        "cnn-90ep" => {
            let e = epochs.unwrap_or(90);
            let scale = |m: usize| ((m * e) as f64 / 90.0).round() as usize;
            Ok(Preset {
                name: name.into(),
                optimizer: OptimizerConfig::sgd(0.9, true, 4e-4),
                schedule: Schedule {
                    kind: ScheduleKind::StepDecay { milestones: vec![scale(30), scale(60)], gamma: 0.1 },
                    base_lr: 0.1,
                    warmup_epochs: 0.0,
                    total_epochs: e,
                    steps_per_epoch: 1,
                },
                batch_size: 128,
                label_smoothing: 0.0,
                ema_decay: None,
            })
        }
        "vit-300ep" => {
            let e = epochs.unwrap_or(300);
            Ok(Preset {
                name: name.into(),
                optimizer: OptimizerConfig::adamw(0.05),
                schedule: Schedule {
                    kind: ScheduleKind::Cosine,
                    base_lr: 1e-3,
                    warmup_epochs: 5.0 * e as f64 / 300.0,
                    total_epochs: e,
                    steps_per_epoch: 1,
                },
                batch_size: 128,
                label_smoothing: 0.1,
                ema_decay: Some(0.9998),
            })
        }
        other => Err(Error::InvalidArgument(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    }
}
