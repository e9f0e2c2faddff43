//! Training-time augmentations: random resized crop + flip, AugMix mixing
//! chains with the Jensen-Shannon consistency loss, and amplitude-phase
//! recombination (APR).

mod fourier;
mod ops;

use num_complex::Complex64;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, Dims};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

pub use fourier::{dft2d, dft_direct, fft_radix2, real_plane, DftPath};
pub use ops::{autocontrast, equalize, posterize, solarize, AugOp, AugPolicy, MAX_MAGNITUDE};

/// Weight of the Jensen-Shannon term when AugMix consistency is enabled.
pub const JS_LOSS_WEIGHT: f32 = 12.0;

fn dims_of(x: &Tensor) -> Result<Dims> {
    if x.ndim() != 4 {
        return Err(Error::Shape(format!("expected NCHW batch, got {:?}", x.shape())));
    }
    Ok(Dims { c: x.shape()[1], h: x.shape()[2], w: x.shape()[3] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicAugConfig {
    /// Range of the crop area as a fraction of the image area.
    pub crop_scale: (f32, f32),
    /// Range of the crop aspect ratio (width / height).
    pub crop_ratio: (f32, f32),
    pub flip_prob: f32,
}

impl Default for BasicAugConfig {
    fn default() -> Self {
        BasicAugConfig { crop_scale: (0.64, 1.0), crop_ratio: (0.75, 4.0 / 3.0), flip_prob: 0.5 }
    }
}

impl BasicAugConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("crop scale range ({lo}, {hi}) must lie in (0, 1]")));
        }
        let (rlo, rhi) = self.crop_ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::InvalidArgument(format!("crop ratio range ({rlo}, {rhi}) is invalid")));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidArgument(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// Random resized crop followed by a horizontal flip, per sample.
/// Sample `i` draws from the stream `(seed, i)`.
pub fn basic_augs(x: &Tensor, seed: u64, config: &BasicAugConfig) -> Result<Tensor> {
    config.validate()?;
    let d = dims_of(x)?;
    let mut out = x.clone();
    for i in 0..x.batch() {
        let mut rng = rng_for(seed, &[stream::AUGMENT, i as u64, 0]);
        let (top, left, ch, cw) = sample_crop(&mut rng, d, config)?;
        let mut img = if (top, left, ch, cw) == (0, 0, d.h, d.w) {
            x.row(i).to_vec()
        } else {
            image::resized_crop(x.row(i), d, top, left, ch, cw)
        };
        if rng.random::<f32>() < config.flip_prob {
            img = image::hflip(&img, d);
        }
        out.row_mut(i).copy_from_slice(&img);
    }
    Ok(out)
}

fn sample_crop(rng: &mut impl Rng, d: Dims, cfg: &BasicAugConfig) -> Result<(usize, usize, usize, usize)> {
    let area = (d.h * d.w) as f64;
    let (lo, hi) = cfg.crop_scale;
    let (rlo, rhi) = (cfg.crop_ratio.0 as f64, cfg.crop_ratio.1 as f64);
    for _ in 0..10 {
        let scale = if lo < hi { rng.random_range(lo as f64..=hi as f64) } else { lo as f64 };
        let ratio = if rlo < rhi { rng.random_range(rlo.ln()..=rhi.ln()).exp() } else { rlo };
        let target = scale * area;
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if ch == 0 || cw == 0 {
            return Err(Error::EmptyResult(format!("crop of scale {scale:.4} on {}x{} is empty", d.h, d.w)));
        }
        if ch <= d.h && cw <= d.w {
            let top = rng.random_range(0..=d.h - ch);
            let left = rng.random_range(0..=d.w - cw);
            return Ok((top, left, ch, cw));
        }
    }
    Ok((0, 0, d.h, d.w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugMixConfig {
    /// Number of chains `k`.
    pub width: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    pub dirichlet_alpha: f64,
    pub beta_alpha: f64,
    /// Upper magnitude bucket for chain operations.
    pub severity: u8,
    pub js_loss_enabled: bool,
}

impl Default for AugMixConfig {
    fn default() -> Self {
        AugMixConfig {
            width: 3,
            depth_min: 1,
            depth_max: 3,
            dirichlet_alpha: 1.0,
            beta_alpha: 1.0,
            severity: 3,
            js_loss_enabled: true,
        }
    }
}

impl AugMixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidArgument("augmix width must be >= 1".into()));
        }
        if !(1 <= self.depth_min && self.depth_min <= self.depth_max && self.depth_max <= 3) {
            return Err(Error::InvalidArgument(format!(
                "augmix depth range [{}, {}] must lie in [1, 3]",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.dirichlet_alpha > 0.0 && self.beta_alpha > 0.0) {
            return Err(Error::InvalidArgument("augmix concentrations must be > 0".into()));
        }
        if self.severity == 0 || self.severity > MAX_MAGNITUDE {
            return Err(Error::InvalidArgument(format!("augmix severity {} outside 1..=10", self.severity)));
        }
        Ok(())
    }
}

/// One AugMix draw for a single image, with its ingredients.
#[derive(Clone, Debug, PartialEq)]
pub struct AugMixDraw {
    pub output: Vec<f32>,
    pub chains: Vec<Vec<f32>>,
    pub weights: Vec<f64>,
    pub m: f64,
}

/// `m·x + (1−m)·Σ wᵢ·chainᵢ`, clamped to [0, 1].
pub fn augmix_mix(x: &[f32], chains: &[Vec<f32>], weights: &[f64], m: f64) -> Vec<f32> {
    (0..x.len())
        .map(|j| {
            let mixed: f64 = chains.iter().zip(weights).map(|(c, &w)| w * c[j] as f64).sum();
            (m * x[j] as f64 + (1.0 - m) * mixed).clamp(0.0, 1.0) as f32
        })
        .collect()
}

pub fn augmix_sample(x: &[f32], d: Dims, cfg: &AugMixConfig, rng: &mut impl Rng) -> Result<AugMixDraw> {
    cfg.validate()?;
    let gamma = Gamma::new(cfg.dirichlet_alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let raw: Vec<f64> = (0..cfg.width).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let m = Beta::new(cfg.beta_alpha, cfg.beta_alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
    let mut chains = Vec::with_capacity(cfg.width);
    for _ in 0..cfg.width {
        let depth = rng.random_range(cfg.depth_min..=cfg.depth_max);
        let mut img = x.to_vec();
        for _ in 0..depth {
            let op = *AugOp::ALL.choose(rng).expect("non-empty op set");
            let magnitude = rng.random_range(1..=cfg.severity);
            img = AugPolicy { op, magnitude }.apply(&img, d, rng);
        }
        chains.push(img);
    }
    let output = augmix_mix(x, &chains, &weights, m);
    Ok(AugMixDraw { output, chains, weights, m })
}

/// AugMix on every sample; `view` selects an independent draw (0, 1, 2, ...).
pub fn augmix_view(x: &Tensor, cfg: &AugMixConfig, seed: u64, view: u64) -> Result<Tensor> {
    let d = dims_of(x)?;
    let mut out = x.clone();
    for i in 0..x.batch() {
        let mut rng = rng_for(seed, &[stream::AUGMENT, i as u64, 1 + view]);
        let draw = augmix_sample(x.row(i), d, cfg, &mut rng)?;
        out.row_mut(i).copy_from_slice(&draw.output);
    }
    Ok(out)
}

pub fn augmix(x: &Tensor, cfg: &AugMixConfig, seed: u64) -> Result<Tensor> {
    augmix_view(x, cfg, seed, 0)
}

/// The two extra views used by the consistency loss.
pub fn augmix_views(x: &Tensor, cfg: &AugMixConfig, seed: u64) -> Result<[Tensor; 2]> {
    Ok([augmix_view(x, cfg, seed, 0)?, augmix_view(x, cfg, seed, 1)?])
}

/// Jensen-Shannon divergence among the softmax outputs of three views,
/// averaged over the batch, and its gradient with respect to each view's logits.
pub fn jensen_shannon(logits: [&Tensor; 3]) -> Result<(f64, [Tensor; 3])> {
    logits[0].check_same_shape(logits[1])?;
    logits[0].check_same_shape(logits[2])?;
    let n = logits[0].batch();
    let k = logits[0].row_len();
    let mut grads = [Tensor::zeros(logits[0].shape()), Tensor::zeros(logits[0].shape()), Tensor::zeros(logits[0].shape())];
    let mut total = 0.0f64;
    for i in 0..n {
        let log_p: Vec<Vec<f64>> = logits.iter().map(|l| log_softmax_f64(l.row(i))).collect();
        let p: Vec<Vec<f64>> = log_p.iter().map(|lp| lp.iter().map(|v| v.exp()).collect()).collect();
        let log_m: Vec<f64> = (0..k)
            .map(|c| {
                let a = [log_p[0][c], log_p[1][c], log_p[2][c]];
                let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                mx + (a.iter().map(|v| (v - mx).exp()).sum::<f64>() / 3.0).ln()
            })
            .collect();
        for v in 0..3 {
            let a: Vec<f64> = (0..k).map(|c| (log_p[v][c] - log_m[c]) / 3.0).collect();
            total += (0..k).map(|c| p[v][c] * a[c]).sum::<f64>();
            let pa: f64 = (0..k).map(|c| p[v][c] * a[c]).sum();
            let row = grads[v].row_mut(i);
            for c in 0..k {
                row[c] = (p[v][c] * (a[c] - pa) / n as f64) as f32;
            }
        }
    }
    Ok((total / n as f64, grads))
}

fn log_softmax_f64(z: &[f32]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = mx + z.iter().map(|&v| (v as f64 - mx).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v as f64 - lse).collect()
}

/// Amplitude-phase recombination before the final clamp: per channel,
/// `IDFT(|DFT(x_amplitude)|·exp(i·angle(DFT(x_phase))))`, real part.
/// Accepts `C×H×W` or `N×C×H×W` tensors with square planes.
pub fn apr_recombine(x_phase: &Tensor, x_amplitude: &Tensor, path: DftPath) -> Result<Tensor> {
    x_phase.check_same_shape(x_amplitude)?;
    if x_phase.ndim() < 3 {
        return Err(Error::Shape(format!("apr needs C×H×W planes, got {:?}", x_phase.shape())));
    }
    let nd = x_phase.ndim();
    let (h, w) = (x_phase.shape()[nd - 2], x_phase.shape()[nd - 1]);
    if h != w {
        return Err(Error::Shape(format!("apr needs square planes, got {h}x{w}")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x_phase.numel());
    for (pp, pa) in x_phase.data().chunks(plane).zip(x_amplitude.data().chunks(plane)) {
        let fp = dft2d(&real_plane(pp), h, w, false, path)?;
        let fa = dft2d(&real_plane(pa), h, w, false, path)?;
        let mixed: Vec<Complex64> = fp.iter().zip(&fa).map(|(p, a)| Complex64::from_polar(a.norm(), p.arg())).collect();
        let back = dft2d(&mixed, h, w, true, path)?;
        out.extend(back.iter().map(|v| v.re as f32));
    }
    Tensor::new(x_phase.shape().to_vec(), out)
}

/// APR of one pair, clamped to [0, 1]. The label follows `x_phase`.
pub fn apr_single(x_phase: &Tensor, x_amplitude: &Tensor) -> Result<Tensor> {
    Ok(apr_recombine(x_phase, x_amplitude, DftPath::Auto)?.map(|v| v.clamp(0.0, 1.0)))
}

/// APR with in-batch pairing: each sample, with probability `prob`, takes
/// the amplitude spectrum of a partner drawn by a seeded batch shuffle.
pub fn apr_batch(x: &Tensor, seed: u64, prob: f32) -> Result<Tensor> {
    dims_of(x)?;
    let n = x.batch();
    let mut rng = rng_for(seed, &[stream::AUGMENT, u64::MAX]);
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(&mut rng);
    let mut out = x.clone();
    for i in 0..n {
        if rng.random::<f32>() < prob && partner[i] != i {
            let mixed = apr_single(&x.sample(i), &x.sample(partner[i]))?;
            out.row_mut(i).copy_from_slice(mixed.data());
        }
    }
    Ok(out)
}
