//! One-dimensional double-well landscape with a sharp and a flat minimum,
//! used to check that sharpness-aware updates prefer the flat basin.

use rand::Rng;

use super::{sam_step, OptimState, OptimizerConfig, SamConfig};
use crate::error::Result;
use crate::nn::ParamMap;
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Softmin temperature joining the two wells.
pub const TEMPERATURE: f64 = 0.05;
pub const SHARP_CENTER: f64 = -1.0;
pub const SHARP_CURVATURE: f64 = 10.0;
pub const FLAT_CENTER: f64 = 1.5;
pub const FLAT_CURVATURE: f64 = 1.0;
pub const LEARNING_RATE: f32 = 0.15;
pub const RHO: f32 = 0.2;
pub const STEPS: usize = 1000;
pub const INIT_RANGE: (f64, f64) = (-4.0, 3.0);

/// Loss and derivative: `−τ·ln(exp(−a/τ) + exp(−b/τ))` with the two quadratic wells `a`, `b`.
pub fn double_well(w: f64) -> (f64, f64) {
    let a = 0.5 * SHARP_CURVATURE * (w - SHARP_CENTER).powi(2);
    let b = 0.5 * FLAT_CURVATURE * (w - FLAT_CENTER).powi(2);
    let da = SHARP_CURVATURE * (w - SHARP_CENTER);
    let db = FLAT_CURVATURE * (w - FLAT_CENTER);
    let (za, zb) = (-a / TEMPERATURE, -b / TEMPERATURE);
    let m = za.max(zb);
    let (ea, eb) = ((za - m).exp(), (zb - m).exp());
    let loss = -TEMPERATURE * (m + (ea + eb).ln());
    let grad = (ea * da + eb * db) / (ea + eb);
    (loss, grad)
}

/// Point where the two wells have equal height; larger `w` lies in the flat basin.
pub fn basin_boundary() -> f64 {
    let r = (SHARP_CURVATURE / FLAT_CURVATURE).sqrt();
    (FLAT_CENTER + r * SHARP_CENTER) / (1.0 + r)
}

pub fn in_flat_basin(w: f64) -> bool {
    w > basin_boundary()
}

pub fn init_for(seed: u64) -> f64 {
    rng_for(seed, &[0]).random_range(INIT_RANGE.0..INIT_RANGE.1)
}

/// Runs plain SGD (`rho = 0`) or SAM from `init`, returning the final iterate.
pub fn run_double_well(init: f64, rho: f32, steps: usize) -> Result<f64> {
    let mut params = ParamMap::new();
    params.insert("w".into(), Tensor::scalar(init as f32));
    let mut opt = OptimState::new(OptimizerConfig::sgd(0.0, false, 0.0))?;
    let cfg = SamConfig::sam(rho);
    for _ in 0..steps {
        sam_step(
            &mut params,
            |p, _| {
                let (l, g) = double_well(p["w"].data()[0] as f64);
                let mut grads = ParamMap::new();
                grads.insert("w".into(), Tensor::scalar(g as f32));
                Ok((l as f32, grads))
            },
            &mut opt,
            &cfg,
            LEARNING_RATE,
        )?;
    }
    Ok(params["w"].data()[0] as f64)
}

/// Number of seeds in `0..seeds` whose run ends in the flat basin.
pub fn flat_basin_count(rho: f32, seeds: u64) -> Result<usize> {
    let mut count = 0;
    for s in 0..seeds {
        if in_flat_basin(run_double_well(init_for(s), rho, STEPS)?) {
            count += 1;
        }
    }
    Ok(count)
}
