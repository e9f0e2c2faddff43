//! Label-preserving image operations used inside AugMix chains.
//!
//! No contrast, brightness, color or noise operation appears here: those
//! overlap with the corruption bank used at test time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{self, Dims, Fill};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugOp {
    Rotate,
    Translate,
    Shear,
    Posterize,
    Solarize,
    EqualizeLite,
    AutocontrastLite,
}

impl AugOp {
    pub const ALL: [AugOp; 7] = [
        AugOp::Rotate,
        AugOp::Translate,
        AugOp::Shear,
        AugOp::Posterize,
        AugOp::Solarize,
        AugOp::EqualizeLite,
        AugOp::AutocontrastLite,
    ];
}

pub const MAX_MAGNITUDE: u8 = 10;

/// One operation at a magnitude bucket in `0..=10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub op: AugOp,
    pub magnitude: u8,
}

impl AugPolicy {
    /// Applies the policy to one `C×H×W` image. Geometric ops draw their
    /// direction from `rng`.
    pub fn apply(&self, img: &[f32], d: Dims, rng: &mut impl Rng) -> Vec<f32> {
        let t = self.magnitude.min(MAX_MAGNITUDE) as f64 / MAX_MAGNITUDE as f64;
        match self.op {
            AugOp::Rotate => image::rotate(img, d, 30.0 * signed(t, rng), &Fill::Replicate),
            AugOp::Translate => {
                let shift = signed(t, rng) * d.w.min(d.h) as f64 / 3.0;
                if rng.random_bool(0.5) {
                    image::translate(img, d, 0.0, shift.round(), &Fill::Replicate)
                } else {
                    image::translate(img, d, shift.round(), 0.0, &Fill::Replicate)
                }
            }
            AugOp::Shear => {
                let k = 0.3 * signed(t, rng);
                image::shear(img, d, k, rng.random_bool(0.5), &Fill::Replicate)
            }
            AugOp::Posterize => posterize(img, 8 - (4.0 * t).floor() as u32),
            AugOp::Solarize => solarize(img, (1.0 - t) as f32),
            AugOp::EqualizeLite => equalize(img, d),
            AugOp::AutocontrastLite => autocontrast(img, d),
        }
    }
}

fn signed(t: f64, rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        t
    } else {
        -t
    }
}

fn to_byte(v: f32) -> u32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u32
}

/// Keeps the top `bits` bits of the 8-bit quantized value.
pub fn posterize(img: &[f32], bits: u32) -> Vec<f32> {
    let shift = 8 - bits.clamp(1, 8);
    img.iter().map(|&v| ((to_byte(v) >> shift) << shift) as f32 / 255.0).collect()
}

/// Inverts values strictly above the threshold.
pub fn solarize(img: &[f32], threshold: f32) -> Vec<f32> {
    img.iter().map(|&v| if v > threshold { 1.0 - v } else { v }).collect()
}

/// Per-channel 256-bin histogram equalization.
pub fn equalize(img: &[f32], d: Dims) -> Vec<f32> {
    let mut out = img.to_vec();
    for ch in 0..d.c {
        let plane = &mut out[ch * d.plane()..(ch + 1) * d.plane()];
        let mut hist = [0usize; 256];
        for &v in plane.iter() {
            hist[to_byte(v) as usize] += 1;
        }
        let total = plane.len();
        let first = hist.iter().position(|&c| c > 0).unwrap_or(0);
        let cdf_min = hist[first];
        if total == cdf_min {
            continue;
        }
        let mut lut = [0.0f32; 256];
        let mut acc = 0usize;
        for (b, &c) in hist.iter().enumerate() {
            acc += c;
            lut[b] = ((acc - cdf_min.min(acc)) as f64 / (total - cdf_min) as f64) as f32;
        }
        for v in plane.iter_mut() {
            *v = lut[to_byte(*v) as usize];
        }
    }
    out
}

/// Per-channel linear stretch of `[min, max]` to `[0, 1]`.
pub fn autocontrast(img: &[f32], d: Dims) -> Vec<f32> {
    let mut out = img.to_vec();
    for ch in 0..d.c {
        let plane = &mut out[ch * d.plane()..(ch + 1) * d.plane()];
        let lo = plane.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            for v in plane.iter_mut() {
                *v = (*v - lo) / (hi - lo);
            }
        }
    }
    out
}
