//! Label-preserving distribution shifts of an existing dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{Texture, TextureDraw};
use super::{Dataset, Provenance};
use crate::attacks::Classifier;
use crate::error::{Error, Result};
use crate::image::{self, Dims, Fill};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodVariant {
    /// Rotation by a magnitude in [45°, 135°] of either sign.
    RotationShift,
    /// Inverted Sobel edge magnitude, grayscale replicated over channels.
    EdgeSketch,
    /// Foreground refilled with a texture family unseen in training.
    TextureRandomized,
    /// Samples the reference model misclassifies.
    HardMined,
}

impl OodVariant {
    pub const ALL: [OodVariant; 4] =
        [OodVariant::RotationShift, OodVariant::EdgeSketch, OodVariant::TextureRandomized, OodVariant::HardMined];

    pub fn name(self) -> &'static str {
        match self {
            OodVariant::RotationShift => "rotation-shift",
            OodVariant::EdgeSketch => "edge-sketch",
            OodVariant::TextureRandomized => "texture-randomized",
            OodVariant::HardMined => "hard-mined",
        }
    }
}

impl std::str::FromStr for OodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OodVariant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown OOD variant `{s}`")))
    }
}

fn border_mean(img: &[f32], d: Dims) -> Vec<f32> {
    (0..d.c)
        .map(|ch| {
            let p = &img[ch * d.plane()..(ch + 1) * d.plane()];
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for r in 0..d.h {
                for c in 0..d.w {
                    if r == 0 || c == 0 || r == d.h - 1 || c == d.w - 1 {
                        acc += p[r * d.w + c] as f64;
                        n += 1;
                    }
                }
            }
            (acc / n as f64) as f32
        })
        .collect()
}

/// Sobel gradient magnitude of the channel-mean image (replicate padding),
/// divided by its maximum and inverted: edges dark on white.
pub fn edge_sketch(img: &[f32], d: Dims) -> Vec<f32> {
    let gray: Vec<f32> = (0..d.plane())
        .map(|j| ((0..d.c).map(|ch| img[ch * d.plane() + j] as f64).sum::<f64>() / d.c as f64) as f32)
        .collect();
    let g = Dims { c: 1, ..d };
    let gx = image::filter2d(&gray, g, &[-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0], 3);
    let gy = image::filter2d(&gray, g, &[-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0], 3);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(&a, &b)| (a as f64).hypot(b as f64)).collect();
    let mx = mag.iter().cloned().fold(0.0, f64::max);
    let norm: Vec<f32> = mag.iter().map(|&m| if mx > 0.0 { (1.0 - m / mx) as f32 } else { 1.0 }).collect();
    (0..d.c).flat_map(|_| norm.iter().copied()).collect()
}

/// Otsu threshold over a 256-bin histogram of values in [0, 1]. Returns
/// `None` for images with a single occupied bin.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let mut hist = [0usize; 256];
    for &v in values {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best, mut best_t) = (-1.0f64, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    Some((best_t as f32 + 0.5) / 255.0)
}

fn texture_refill(img: &[f32], d: Dims, rng: &mut impl Rng) -> Vec<f32> {
    let gray: Vec<f32> = (0..d.plane())
        .map(|j| ((0..d.c).map(|ch| img[ch * d.plane() + j] as f64).sum::<f64>() / d.c as f64) as f32)
        .collect();
    let Some(t) = otsu_threshold(&gray) else {
        return img.to_vec();
    };
    let kind = Texture::HELD_OUT[rng.random_range(0..Texture::HELD_OUT.len())];
    let tex = TextureDraw::sample(kind, rng);
    let mut out = img.to_vec();
    for ch in 0..d.c {
        let plane = &img[ch * d.plane()..(ch + 1) * d.plane()];
        let fg: Vec<usize> = (0..d.plane()).filter(|&j| gray[j] > t).collect();
        if fg.is_empty() {
            continue;
        }
        let level = fg.iter().map(|&j| plane[j] as f64).sum::<f64>() / fg.len() as f64;
        for &j in &fg {
            out[ch * d.plane() + j] = (level * tex.factor(j / d.w, j % d.w)).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Builds a shifted copy of `ds`. Labels are preserved; the hard-mined
/// variant needs a reference model and keeps only its mistakes.
pub fn ood_variants<C: Classifier>(ds: &Dataset, variant: OodVariant, reference: Option<&C>, seed: u64) -> Result<Dataset> {
    let [c, h, w] = ds.sample_shape();
    let d = Dims { c, h, w };
    let provenance = Provenance::Derived { parent: Box::new(ds.provenance.clone()), transform: variant.name().into(), seed };
    if variant == OodVariant::HardMined {
        let model = reference.ok_or_else(|| Error::InvalidArgument("hard-mined variant needs a reference model".into()))?;
        let mut keep = Vec::new();
        for start in (0..ds.len()).step_by(256) {
            let idx: Vec<usize> = (start..(start + 256).min(ds.len())).collect();
            let pred = model.logits(&ds.images().select(&idx)?)?.argmax_rows();
            keep.extend(idx.iter().zip(pred).filter(|(&i, p)| *p != ds.labels()[i]).map(|(&i, _)| i));
        }
        if keep.is_empty() {
            return Err(Error::EmptyResult("reference model misclassifies no sample; hard-mined set is empty".into()));
        }
        let mut out = ds.subset(&keep, variant.name())?;
        out.provenance = provenance;
        return Ok(out);
    }
    let mut images = ds.images().clone();
    for i in 0..ds.len() {
        let mut rng = rng_for(seed, &[stream::OOD, variant as u64, i as u64]);
        let src = ds.images().row(i);
        let img = match variant {
            OodVariant::RotationShift => {
                let mag = rng.random_range(45.0..=135.0);
                let angle = if rng.random_bool(0.5) { mag } else { -mag };
                image::rotate(src, d, angle, &Fill::PerChannel(border_mean(src, d)))
            }
            OodVariant::EdgeSketch => edge_sketch(src, d),
            OodVariant::TextureRandomized => texture_refill(src, d, &mut rng),
            OodVariant::HardMined => unreachable!(),
        };
        for (o, v) in images.row_mut(i).iter_mut().zip(img) {
            *o = v.clamp(0.0, 1.0);
        }
    }
    Dataset::new(images, ds.labels().to_vec(), ds.num_classes(), variant.name(), provenance)
}
