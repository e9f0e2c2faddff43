//! Central finite differences, used as the oracle for `Model::backward`.
//!
//! The perturbed forward passes run in `f64` so that the difference quotient
//! is not swamped by single-precision rounding.

use std::collections::BTreeMap;

use super::loss::cross_entropy_f64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::{forward_generic, BnBranch, LayerAux, Model, ParamMap};
use super::spec::{LayerKind, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Finite-difference gradient of mean unsmoothed cross-entropy with respect to
/// every parameter coordinate, batch norm in eval mode.
pub fn finite_diff_grad(model: &Model, batch: &Tensor, labels: &[usize], h: f64) -> Result<ParamMap> {
    Ok(finite_diff_grad_with_kinks(model, batch, labels, h)?.grads)
}

/// Central differences plus, per coordinate, whether the probe points `w ± h`
/// land in a different linear region than `w` (a ReLU sign or max-pool winner
/// changed). On such coordinates the loss is not differentiable across the
/// probe interval and the difference quotient is not a valid oracle.
#[derive(Clone, Debug)]
pub struct FiniteDiff {
    pub grads: ParamMap,
    pub kinked: BTreeMap<String, Vec<bool>>,
}

impl FiniteDiff {
    pub fn kinked_count(&self) -> usize {
        self.kinked.values().map(|v| v.iter().filter(|&&k| k).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.kinked.values().map(Vec::len).sum()
    }
}

pub fn finite_diff_grad_with_kinks(model: &Model, batch: &Tensor, labels: &[usize], h: f64) -> Result<FiniteDiff> {
    let n = batch.batch();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    let k = model.num_classes();
    let input: Vec<f64> = batch.data().iter().map(|&v| v as f64).collect();
    let mut params: BTreeMap<String, Vec<f64>> = model
        .params()
        .iter()
        .map(|(name, t)| (name.clone(), t.data().iter().map(|&v| v as f64).collect()))
        .collect();
    let eval = |p: &BTreeMap<String, Vec<f64>>| -> Result<(f64, Vec<u8>)> {
        let out = forward_generic::<f64, _>(
            model.spec(),
            model.activation_shapes(),
            p,
            model.bn_state(),
            input.clone(),
            n,
            false,
            BnBranch::Main,
            None,
            true,
        )?;
        let region = linear_region(model.spec(), &input, &out.acts, &out.aux);
        Ok((cross_entropy_f64(&out.logits, k, labels, 0.0), region))
    };
    let (_, base_region) = eval(&params)?;
    let mut grads = ParamMap::new();
    let mut kinked = BTreeMap::new();
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let len = params[&name].len();
        let mut g = Vec::with_capacity(len);
        let mut kinks = Vec::with_capacity(len);
        for j in 0..len {
            let orig = params[&name][j];
            params.get_mut(&name).unwrap()[j] = orig + h;
            let (lp, rp) = eval(&params)?;
            params.get_mut(&name).unwrap()[j] = orig - h;
            let (lm, rm) = eval(&params)?;
            params.get_mut(&name).unwrap()[j] = orig;
            g.push(((lp - lm) / (2.0 * h)) as f32);
            kinks.push(rp != base_region || rm != base_region);
        }
        grads.insert(name.clone(), Tensor::new(model.params()[&name].shape().to_vec(), g)?);
        kinked.insert(name, kinks);
    }
    Ok(FiniteDiff { grads, kinked })
}

/// Encodes which piece of every piecewise-linear layer is active.
fn linear_region(spec: &ModelSpec, input: &[f64], acts: &[Vec<f64>], aux: &[LayerAux<f64>]) -> Vec<u8> {
    let mut code = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match (layer, &aux[i]) {
            (LayerKind::Relu, _) => {
                let x = if i == 0 { input } else { &acts[i - 1] };
                code.extend(x.iter().map(|&v| (v > 0.0) as u8));
            }
            (LayerKind::MaxPool { .. }, LayerAux::MaxIdx(idx)) => {
                code.extend(idx.iter().flat_map(|v| v.to_le_bytes()));
            }
            _ => {}
        }
    }
    code
}

/// Largest per-tensor relative error `max|a - b| / max(max|b|, floor)` over
/// all shared keys; `b` is the reference.
pub fn max_relative_error(a: &ParamMap, b: &ParamMap) -> Result<f64> {
    max_relative_error_masked(a, b, None)
}

/// As [`max_relative_error`], skipping coordinates flagged in `skip`.
pub fn max_relative_error_masked(
    a: &ParamMap,
    b: &ParamMap,
    skip: Option<&BTreeMap<String, Vec<bool>>>,
) -> Result<f64> {
    const FLOOR: f64 = 1e-6;
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::ParamMismatch("gradient maps have different keys".into()));
    }
    let mut worst = 0.0f64;
    for (name, ta) in a {
        let tb = &b[name];
        ta.check_same_shape(tb)?;
        let scale = (tb.abs_max() as f64).max(FLOOR);
        let mask = skip.and_then(|m| m.get(name));
        let diff = ta
            .data()
            .iter()
            .zip(tb.data())
            .enumerate()
            .filter(|(j, _)| !mask.is_some_and(|m| m[*j]))
            .map(|(_, (&x, &y))| (x as f64 - y as f64).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

/// A small random network, batch and labels for gradient checking: two
/// convolutions on an 8×8 input with randomly chosen activation, pooling,
/// normalization and head.
pub fn random_case(seed: u64) -> (ModelSpec, Tensor, Vec<usize>) {
    let mut rng = rng_for(seed, &[0x6772_6164]);
    let channels = rng.random_range(1..=2usize);
    let classes = rng.random_range(3..=4usize);
    let act = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            LayerKind::Relu
        } else {
            LayerKind::SmoothActivation
        }
    };
    let mut layers = vec![LayerKind::Conv2d {
        out_channels: rng.random_range(2..=4),
        kernel: 3,
        stride: 1,
        padding: 1,
    }];
    layers.push(act(&mut rng));
    match rng.random_range(0..5u32) {
        0 => layers.push(LayerKind::MaxPool { kernel: 2 }),
        1 => layers.push(LayerKind::AvgPool { kernel: 2 }),
        2 => layers.push(LayerKind::BlurPool { stride: 2, kernel: 3 }),
        3 => layers.push(LayerKind::DwtPool),
        _ => {}
    }
    if rng.random_bool(0.5) {
        layers.push(LayerKind::BatchNorm);
    }
    layers.push(LayerKind::Conv2d {
        out_channels: rng.random_range(2..=4),
        kernel: 3,
        stride: rng.random_range(1..=2),
        padding: 1,
    });
    layers.push(act(&mut rng));
    if rng.random_bool(0.5) {
        layers.push(LayerKind::GlobalAvgPool);
    } else {
        layers.push(LayerKind::Flatten);
    }
    layers.push(LayerKind::Linear { out_features: classes });
    let spec = ModelSpec { input_shape: [channels, 8, 8], num_classes: classes, layers };
    let n = rng.random_range(2..=3usize);
    let data = (0..n * channels * 64).map(|_| rng.random::<f32>()).collect();
    let batch = Tensor::new(vec![n, channels, 8, 8], data).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (spec, batch, labels)
}
