//! Synthetic corruption bank (noise, blur, weather, digital) at five
//! severities, with corruption-error scoring against a stored baseline grid.

mod kinds;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::Classifier;
use crate::error::{Error, Result};
use crate::image::Dims;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

pub use kinds::{defocus_kernel, motion_kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    Fog,
    Brightness,
    Contrast,
    Pixelate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Noise,
    Blur,
    Weather,
    Digital,
}

pub const MAX_SEVERITY: u8 = 5;

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 9] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn category(self) -> Category {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise => Category::Noise,
            DefocusBlur | MotionBlur => Category::Blur,
            Fog | Brightness => Category::Weather,
            Contrast | Pixelate => Category::Digital,
        }
    }

    /// Parameter for severities 1..=5.
    pub fn table(self) -> [f64; 5] {
        use CorruptionKind::*;
        match self {
            GaussianNoise => [0.04, 0.08, 0.12, 0.18, 0.26],
            ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0],
            ImpulseNoise => [0.01, 0.03, 0.06, 0.1, 0.17],
            DefocusBlur => [1.0, 2.0, 3.0, 4.0, 6.0],
            MotionBlur => [3.0, 5.0, 7.0, 9.0, 12.0],
            Fog => [0.15, 0.25, 0.35, 0.45, 0.6],
            Brightness => [0.1, 0.2, 0.3, 0.4, 0.5],
            Contrast => [0.75, 0.6, 0.45, 0.3, 0.2],
            Pixelate => [0.6, 0.5, 0.4, 0.3, 0.25],
        }
    }

    fn index(self) -> u64 {
        CorruptionKind::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind `{s}`")))
    }
}

/// Corrupts every sample of an NCHW batch. Severity 0 returns the input
/// unchanged; sample `i` draws noise from the stream `(seed, kind, severity, i)`.
pub fn corrupt(x: &Tensor, kind: CorruptionKind, severity: u8, seed: u64) -> Result<Tensor> {
    let ids: Vec<u64> = (0..x.batch() as u64).collect();
    corrupt_ids(x, kind, severity, seed, &ids)
}

/// As [`corrupt`], keyed by explicit sample ids.
pub fn corrupt_ids(x: &Tensor, kind: CorruptionKind, severity: u8, seed: u64, ids: &[u64]) -> Result<Tensor> {
    if severity > MAX_SEVERITY {
        return Err(Error::InvalidArgument(format!("severity {severity} exceeds {MAX_SEVERITY}")));
    }
    if x.ndim() != 4 {
        return Err(Error::Shape(format!("corrupt expects NCHW, got {:?}", x.shape())));
    }
    if ids.len() != x.batch() {
        return Err(Error::Shape(format!("{} ids for {} samples", ids.len(), x.batch())));
    }
    if severity == 0 {
        return Ok(x.clone());
    }
    let d = Dims { c: x.shape()[1], h: x.shape()[2], w: x.shape()[3] };
    let param = kind.table()[severity as usize - 1];
    let mut out = x.clone();
    for (i, &id) in ids.iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::CORRUPT, kind.index(), severity as u64, id]);
        let img = kinds::apply(kind, param, x.row(i), d, &mut rng)?;
        for (o, v) in out.row_mut(i).iter_mut().zip(img) {
            *o = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Error rates of one model over the corruption suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorGrid {
    pub clean_error: f64,
    pub severities: Vec<u8>,
    /// Kind name to one error rate per entry of `severities`.
    pub errors: BTreeMap<String, Vec<f64>>,
}

const CHUNK: usize = 256;

fn error_rate(model: &impl Classifier, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut wrong = 0usize;
    for start in (0..labels.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(labels.len());
        let idx: Vec<usize> = (start..end).collect();
        let pred = model.logits(&images.select(&idx)?)?.argmax_rows();
        wrong += pred.iter().zip(&labels[start..end]).filter(|(p, l)| p != l).count();
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Error rate for every kind at severities 1..=5, plus the clean error.
pub fn corruption_suite_eval(model: &impl Classifier, images: &Tensor, labels: &[usize], seed: u64) -> Result<ErrorGrid> {
    corruption_suite_eval_with(model, images, labels, seed, &CorruptionKind::ALL, &[1, 2, 3, 4, 5])
}

pub fn corruption_suite_eval_with(
    model: &impl Classifier,
    images: &Tensor,
    labels: &[usize],
    seed: u64,
    kinds: &[CorruptionKind],
    severities: &[u8],
) -> Result<ErrorGrid> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != images.batch() {
        return Err(Error::Shape(format!("{} labels for {} images", labels.len(), images.batch())));
    }
    let clean_error = error_rate(model, images, labels)?;
    let mut errors = BTreeMap::new();
    for &kind in kinds {
        let mut row = Vec::with_capacity(severities.len());
        for &s in severities {
            let corrupted = corrupt(images, kind, s, seed)?;
            row.push(error_rate(model, &corrupted, labels)?);
        }
        errors.insert(kind.name().to_string(), row);
    }
    Ok(ErrorGrid { clean_error, severities: severities.to_vec(), errors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub kind: String,
    pub model_errors: Vec<f64>,
    pub baseline_errors: Vec<f64>,
    /// `100·Σ_s E_s / Σ_s E_s^baseline`.
    pub ce: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub rows: Vec<CorruptionRow>,
    pub mce: f64,
    pub clean_error: f64,
    pub baseline_clean_error: f64,
}

/// Corruption errors normalized by the baseline, averaged over kinds.
pub fn mce(model_grid: &ErrorGrid, baseline_grid: &ErrorGrid) -> Result<CorruptionReport> {
    if model_grid.severities != baseline_grid.severities {
        return Err(Error::InvalidArgument("error grids cover different severities".into()));
    }
    let model_kinds: Vec<&String> = model_grid.errors.keys().collect();
    let base_kinds: Vec<&String> = baseline_grid.errors.keys().collect();
    if model_kinds != base_kinds {
        return Err(Error::InvalidArgument(format!("error grids cover different kinds: {model_kinds:?} vs {base_kinds:?}")));
    }
    if model_kinds.is_empty() {
        return Err(Error::EmptyResult("error grid has no corruption kinds".into()));
    }
    let mut rows = Vec::new();
    for (kind, errs) in &model_grid.errors {
        let base = &baseline_grid.errors[kind];
        if errs.len() != base.len() || errs.len() != model_grid.severities.len() {
            return Err(Error::InvalidArgument(format!("grid row `{kind}` has the wrong length")));
        }
        let total_base: f64 = base.iter().sum();
        if !(total_base > 0.0) {
            return Err(Error::ZeroBaseline(kind.clone()));
        }
        let total: f64 = errs.iter().sum();
        rows.push(CorruptionRow {
            kind: kind.clone(),
            model_errors: errs.clone(),
            baseline_errors: base.clone(),
            ce: 100.0 * (total / total_base),
        });
    }
    let mce = rows.iter().map(|r| r.ce).sum::<f64>() / rows.len() as f64;
    Ok(CorruptionReport {
        rows,
        mce,
        clean_error: model_grid.clean_error,
        baseline_clean_error: baseline_grid.clean_error,
    })
}
