//! Procedural shapes classification task.
//!
//! Each sample is one of ten parametric shapes with a random center, size and
//! rotation-free pose, filled with a texture over a flat background. Labels
//! are assigned round-robin, so classes are balanced to within one sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 10] =
    ["circle", "square", "triangle", "plus", "ring", "diamond", "x", "half-disk", "frame", "tee"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Flat,
    Stripes,
    Checker,
    /// Held out from training; used by the texture-randomized variant.
    Dots,
    /// Held out from training.
    Speckle,
}

impl Texture {
    pub const TRAIN: [Texture; 3] = [Texture::Flat, Texture::Stripes, Texture::Checker];
    pub const HELD_OUT: [Texture; 2] = [Texture::Dots, Texture::Speckle];
}

/// Texture parameters drawn once per sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TextureDraw {
    kind: Texture,
    freq: f64,
    angle: f64,
    phase: f64,
    seed: u64,
}

impl TextureDraw {
    pub(crate) fn sample(kind: Texture, rng: &mut impl Rng) -> Self {
        TextureDraw {
            kind,
            freq: rng.random_range(0.6..1.4),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            seed: rng.random(),
        }
    }

    /// Multiplicative factor in [0.6, 1] (training textures stay in [0.8, 1]) at pixel `(r, c)`.
    pub(crate) fn factor(&self, r: usize, c: usize) -> f64 {
        let (y, x) = (r as f64, c as f64);
        match self.kind {
            Texture::Flat => 1.0,
            Texture::Stripes => {
                let t = (x * self.angle.cos() + y * self.angle.sin()) * self.freq + self.phase;
                if t.sin() >= 0.0 {
                    1.0
                } else {
                    0.8
                }
            }
            Texture::Checker => {
                let p = (2.5 / self.freq).max(1.0);
                if (((x / p).floor() + (y / p).floor()) as i64).rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.8
                }
            }
            Texture::Dots => {
                let p = 3.0 / self.freq;
                let (dx, dy) = ((x / p).fract() - 0.5, (y / p).fract() - 0.5);
                if dx * dx + dy * dy < 0.09 {
                    0.6
                } else {
                    1.0
                }
            }
            Texture::Speckle => {
                let h = derive_seed(self.seed, &[r as u64, c as u64]);
                0.6 + 0.4 * (h >> 11) as f64 / (1u64 << 53) as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesConfig {
    pub n: usize,
    pub num_classes: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub channels: usize,
    pub textures: Vec<Texture>,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig { n: 1000, num_classes: 10, size: 28, channels: 1, textures: Texture::TRAIN.to_vec() }
    }
}

/// Membership of normalized coordinates `(u, v)` (shape frame, `v` down) in shape `k`.
fn inside(k: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    let m = u.abs().max(v.abs());
    match k {
        0 => r2 <= 1.0,
        1 => m <= 0.8,
        2 => (-0.9..=0.8).contains(&v) && u.abs() <= (v + 0.9) * 0.55,
        3 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        4 => (0.3..=1.0).contains(&r2),
        5 => u.abs() + v.abs() <= 1.0,
        6 => ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4) && m <= 0.85,
        7 => r2 <= 1.0 && v >= -0.1,
        8 => m <= 0.9 && m >= 0.5,
        _ => ((v + 0.65).abs() <= 0.28 && u.abs() <= 0.95) || (u.abs() <= 0.28 && (-0.95..=0.95).contains(&v)),
    }
}

/// Renders one sample; coverage is 3×3 supersampled.
pub(crate) fn render(label: usize, size: usize, channels: usize, texture: Texture, rng: &mut impl Rng) -> Vec<f32> {
    let s = size as f64;
    let radius = rng.random_range(0.26..0.4) * s;
    let margin = radius * 0.95;
    let cy = rng.random_range(margin..(s - margin).max(margin + 1e-9));
    let cx = rng.random_range(margin..(s - margin).max(margin + 1e-9));
    let fg: Vec<f64> = (0..channels).map(|_| rng.random_range(0.75..=1.0)).collect();
    let bg: Vec<f64> = (0..channels).map(|_| rng.random_range(0.0..=0.25)).collect();
    let tex = TextureDraw::sample(texture, rng);
    let mut out = vec![0.0f32; channels * size * size];
    for r in 0..size {
        for c in 0..size {
            let mut hits = 0;
            for sy in 0..3 {
                for sx in 0..3 {
                    let y = r as f64 + (sy as f64 + 0.5) / 3.0;
                    let x = c as f64 + (sx as f64 + 0.5) / 3.0;
                    if inside(label, (x - cx) / radius, (y - cy) / radius) {
                        hits += 1;
                    }
                }
            }
            let cov = hits as f64 / 9.0;
            let f = tex.factor(r, c);
            for ch in 0..channels {
                let v = bg[ch] + cov * (fg[ch] * f - bg[ch]);
                out[(ch * size + r) * size + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Generates `config.n` samples; sample `i` has label `i mod K` and is drawn
/// from its own stream, so any prefix of a larger dataset is reproducible.
pub fn gen_shapes(config: &ShapesConfig, seed: u64) -> Result<Dataset> {
    if config.num_classes == 0 || config.num_classes > SHAPE_NAMES.len() {
        return Err(Error::InvalidArgument(format!("num_classes {} must be in 1..=10", config.num_classes)));
    }
    if config.textures.is_empty() || config.size < 8 || config.channels == 0 {
        return Err(Error::InvalidArgument("shapes config needs textures, size >= 8 and channels >= 1".into()));
    }
    let (c, s) = (config.channels, config.size);
    let mut data = Vec::with_capacity(config.n * c * s * s);
    let mut labels = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let label = i % config.num_classes;
        let mut rng = rng_for(seed, &[stream::SHAPES, i as u64]);
        let tex = config.textures[rng.random_range(0..config.textures.len())];
        data.extend(render(label, s, c, tex, &mut rng));
        labels.push(label);
    }
    let images = Tensor::new([config.n.max(1), c, s, s], data).map_err(|_| Error::EmptyDataset)?;
    Dataset::new(images, labels, config.num_classes, "shapes", Provenance::Generator { name: "gen_shapes".into(), seed })
}

/// Resampled split from a fresh generator seed, tagged "v2-seed".
pub fn v2_split(config: &ShapesConfig, seed: u64) -> Result<Dataset> {
    let fresh = derive_seed(seed, &[u64::from_le_bytes(*b"v2-seed\0")]);
    let mut ds = gen_shapes(config, fresh)?;
    ds.split = "v2-seed".into();
    Ok(ds)
}
