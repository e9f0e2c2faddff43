//! Sharpness-aware minimization (SAM) and the surrogate-gap variant (GSAM).

use serde::{Deserialize, Serialize};

use super::OptimState;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Model, ParamMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamVariant {
    Sam,
    Gsam,
    /// Reserved; rejected as unimplemented.
    Esam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamConfig {
    /// Perturbation radius.
    pub rho: f32,
    pub variant: SamVariant,
    pub gsam_alpha: f32,
}

impl SamConfig {
    pub fn sam(rho: f32) -> Self {
        SamConfig { rho, variant: SamVariant::Sam, gsam_alpha: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == SamVariant::Esam {
            return Err(Error::Unimplemented("ESAM".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("sam rho {} must be >= 0", self.rho)));
        }
        Ok(())
    }
}

fn dot(a: &ParamMap, b: &ParamMap) -> f64 {
    a.iter().map(|(k, t)| t.data().iter().zip(b[k].data()).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>()).sum()
}

/// One sharpness-aware update. `grad_fn(params, pass)` returns the loss and
/// gradient at `params`; pass 0 is the clean point, pass 1 the perturbed one.
/// With a zero radius or zero gradient the base optimizer is applied to the
/// clean gradient directly. Returns the clean loss.
pub fn sam_step(
    params: &mut ParamMap,
    mut grad_fn: impl FnMut(&ParamMap, usize) -> Result<(f32, ParamMap)>,
    opt: &mut OptimState,
    cfg: &SamConfig,
    lr: f32,
) -> Result<f32> {
    cfg.validate()?;
    let (loss, g) = grad_fn(params, 0)?;
    let norm = dot(&g, &g).sqrt();
    if cfg.rho == 0.0 || norm == 0.0 {
        opt.step(params, &g, lr)?;
        return Ok(loss);
    }
    let s = cfg.rho as f64 / norm;
    let mut perturbed = params.clone();
    for (k, t) in perturbed.iter_mut() {
        for (w, &gi) in t.data_mut().iter_mut().zip(g[k].data()) {
            *w += (s * gi as f64) as f32;
        }
    }
    let (_, mut g1) = grad_fn(&perturbed, 1)?;
    if cfg.variant == SamVariant::Gsam && cfg.gsam_alpha != 0.0 {
        let n1 = dot(&g1, &g1);
        if n1 > 0.0 {
            let c = dot(&g, &g1) / n1;
            let a = cfg.gsam_alpha as f64;
            for (k, t) in g1.iter_mut() {
                for (v, &gi) in t.data_mut().iter_mut().zip(g[k].data()) {
                    let g1v = *v as f64;
                    *v = (g1v - a * (gi as f64 - c * g1v)) as f32;
                }
            }
        }
    }
    opt.step(params, &g1, lr)?;
    Ok(loss)
}

/// SAM on a model's cross-entropy. Both passes reuse the stochastic-layer
/// seed `batch_seed`; only the clean pass updates running statistics.
pub fn sam_step_model(
    model: &mut Model,
    x: &Tensor,
    y: &[usize],
    opt: &mut OptimState,
    cfg: &SamConfig,
    lr: f32,
    label_smoothing: f32,
    batch_seed: u64,
) -> Result<f32> {
    let mut params = model.params().clone();
    let result = sam_step(
        &mut params,
        |p, pass| {
            model.set_params(p.clone())?;
            model.reseed_stochastic(batch_seed);
            model.set_update_running_stats(pass == 0);
            let (logits, cache) = model.forward(x, true)?;
            model.set_update_running_stats(true);
            let (loss, dl) = cross_entropy(&logits, y, label_smoothing)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            let grads = model.backward(cache.as_ref().expect("retained cache"), &dl)?;
            Ok((loss, grads.params))
        },
        opt,
        cfg,
        lr,
    );
    model.set_update_running_stats(true);
    let loss = result?;
    model.set_params(params)?;
    Ok(loss)
}
