//! Per-kind corruption kernels on one `C×H×W` image (unclamped output).

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::CorruptionKind;
use crate::error::{Error, Result};
use crate::image::{filter2d, Dims};

pub(super) fn apply(kind: CorruptionKind, p: f64, img: &[f32], d: Dims, rng: &mut impl Rng) -> Result<Vec<f32>> {
    use CorruptionKind::*;
    Ok(match kind {
        GaussianNoise => {
            let n = Normal::new(0.0, p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            img.iter().map(|&v| (v as f64 + n.sample(rng)) as f32).collect()
        }
        ShotNoise => img
            .iter()
            .map(|&v| {
                let lambda = v.max(0.0) as f64 * p;
                if lambda > 0.0 {
                    (Poisson::new(lambda).expect("positive rate").sample(rng) / p) as f32
                } else {
                    0.0
                }
            })
            .collect(),
        ImpulseNoise => img
            .iter()
            .map(|&v| {
                if rng.random::<f64>() < p {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        DefocusBlur => {
            let (k, size) = defocus_kernel(p);
            filter2d(img, d, &k, size)
        }
        MotionBlur => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (k, size) = motion_kernel(p as usize, angle);
            filter2d(img, d, &k, size)
        }
        Fog => {
            let cy = rng.random_range(0.0..d.h as f64);
            let cx = rng.random_range(0.0..d.w as f64);
            let dmax = ((d.h * d.h + d.w * d.w) as f64).sqrt();
            let mut out = img.to_vec();
            for ch in 0..d.c {
                for r in 0..d.h {
                    for c in 0..d.w {
                        let dist = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                        let weight = p * (1.0 - 0.5 * dist / dmax);
                        let j = (ch * d.h + r) * d.w + c;
                        out[j] = (img[j] as f64 + (1.0 - img[j] as f64) * weight) as f32;
                    }
                }
            }
            out
        }
        Brightness => img.iter().map(|&v| (v as f64 + p) as f32).collect(),
        Contrast => {
            let mut out = img.to_vec();
            for plane in out.chunks_mut(d.plane()) {
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
                for v in plane.iter_mut() {
                    *v = ((*v as f64 - mean) * p + mean) as f32;
                }
            }
            out
        }
        Pixelate => pixelate(img, d, p),
    })
}

/// Normalized disk of the given radius, as a `(2r+1)²` kernel.
pub fn defocus_kernel(radius: f64) -> (Vec<f64>, usize) {
    let r = radius.ceil() as isize;
    let size = (2 * r + 1) as usize;
    let mut k = vec![0.0; size * size];
    for y in -r..=r {
        for x in -r..=r {
            if ((x * x + y * y) as f64) <= radius * radius {
                k[((y + r) as usize) * size + (x + r) as usize] = 1.0;
            }
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    (k, size)
}

/// Normalized line of `length` taps through the kernel center at `angle` radians.
pub fn motion_kernel(length: usize, angle: f64) -> (Vec<f64>, usize) {
    let size = length | 1;
    let half = (size / 2) as f64;
    let mut k = vec![0.0; size * size];
    let (s, c) = angle.sin_cos();
    for t in 0..length {
        let off = t as f64 - (length as f64 - 1.0) / 2.0;
        let x = (half + off * c).round() as usize;
        let y = (half + off * s).round() as usize;
        k[y.min(size - 1) * size + x.min(size - 1)] = 1.0;
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, size)
}

/// Box-average down to `factor` of each side, then nearest-neighbour back up.
fn pixelate(img: &[f32], d: Dims, factor: f64) -> Vec<f32> {
    let sh = ((d.h as f64 * factor).round() as usize).max(1);
    let sw = ((d.w as f64 * factor).round() as usize).max(1);
    let mut out = vec![0.0f32; img.len()];
    for ch in 0..d.c {
        let plane = &img[ch * d.plane()..(ch + 1) * d.plane()];
        let mut small = vec![0.0f64; sh * sw];
        for by in 0..sh {
            let (r0, r1) = (by * d.h / sh, (by + 1) * d.h / sh);
            for bx in 0..sw {
                let (c0, c1) = (bx * d.w / sw, (bx + 1) * d.w / sw);
                let mut acc = 0.0;
                for r in r0..r1 {
                    for c in c0..c1 {
                        acc += plane[r * d.w + c] as f64;
                    }
                }
                small[by * sw + bx] = acc / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
        for r in 0..d.h {
            for c in 0..d.w {
                out[ch * d.plane() + r * d.w + c] = small[(r * sh / d.h) * sw + c * sw / d.w] as f32;
            }
        }
    }
    out
}
