//! Elementwise interpolation between two weight sets.

use crate::error::{Error, Result};
use crate::nn::{Model, ParamMap};
use crate::tensor::Tensor;

fn lerp_map(a: &ParamMap, b: &ParamMap, alpha: f64, what: &str) -> Result<ParamMap> {
    let ka: Vec<&String> = a.keys().collect();
    let kb: Vec<&String> = b.keys().collect();
    if ka != kb {
        let missing: Vec<&&String> = ka.iter().filter(|k| !b.contains_key(k.as_str())).chain(kb.iter().filter(|k| !a.contains_key(k.as_str()))).collect();
        return Err(Error::ParamMismatch(format!("{what} key sets differ: {missing:?}")));
    }
    let mut out = ParamMap::new();
    for (k, ta) in a {
        let tb = &b[k];
        if ta.shape() != tb.shape() {
            return Err(Error::ParamMismatch(format!("{what} `{k}` has shapes {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| ((1.0 - alpha) * x as f64 + alpha * y as f64) as f32)
            .collect();
        out.insert(k.clone(), Tensor::new(ta.shape().to_vec(), data)?);
    }
    Ok(out)
}

/// `θ_α = (1−α)·θ_orig + α·θ_ft` for every α, over parameters and running
/// statistics alike. Each value is computed in f64 and rounded once.
pub fn wise_ft(theta_orig: &Model, theta_ft: &Model, alphas: &[f32]) -> Result<Vec<(f32, Model)>> {
    if theta_orig.spec() != theta_ft.spec() {
        return Err(Error::ParamMismatch("models have different architectures".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            if !alpha.is_finite() {
                return Err(Error::InvalidArgument(format!("interpolation weight {alpha}")));
            }
            let a = alpha as f64;
            let params = lerp_map(theta_orig.params(), theta_ft.params(), a, "parameter")?;
            let state = lerp_map(theta_orig.bn_state(), theta_ft.bn_state(), a, "running statistic")?;
            let mut m = Model::from_parts(theta_orig.spec().clone(), params, state)?;
            m.set_mode(theta_orig.mode());
            Ok((alpha, m))
        })
        .collect()
}
