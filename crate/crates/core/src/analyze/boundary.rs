//! Decision-boundary maps on the plane spanned by the adversarial gradient
//! direction and a random direction orthogonal to it.

use rand_distr::{Distribution, StandardNormal};

use crate::attacks::{Classifier, LossKind};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

/// Default grid side (odd, so the center cell is the probed sample).
pub const DEFAULT_RESOLUTION: usize = 65;
/// Default half-width as a multiple of the evaluation radius.
pub const DEFAULT_SPAN_FACTOR: f32 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMap {
    pub resolution: usize,
    /// Row-major `R×R` class ids. Row 0 is `b = +span`, column 0 is `a = −span`.
    pub grid: Vec<usize>,
    /// Random direction orthogonal to `v` (horizontal axis).
    pub u: Vec<f32>,
    /// Normalized input gradient of the loss (vertical axis).
    pub v: Vec<f32>,
    pub span: f32,
    pub label: usize,
    pub center_class: usize,
    /// Smallest `‖δ‖₂ = √(a² + b²)` over cells whose class differs from the
    /// label; infinite when every cell is correct.
    pub min_misclass_radius: f64,
    /// The gradient vanished and `v` is a second random direction instead.
    pub fallback_direction: bool,
}

impl BoundaryMap {
    /// Grid coordinate of index `i` in `[−span, span]`; the center maps to 0 exactly.
    pub fn offset(&self, i: usize) -> f64 {
        offset(i, self.resolution, self.span)
    }

    pub fn at(&self, row: usize, col: usize) -> usize {
        self.grid[row * self.resolution + col]
    }

    pub fn distinct_classes(&self) -> usize {
        let mut seen: Vec<usize> = self.grid.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Class ids as an `R×R` tensor for palette rendering.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.resolution, self.resolution], self.grid.iter().map(|&c| c as f32).collect()).expect("grid shape")
    }
}

fn offset(i: usize, r: usize, span: f32) -> f64 {
    if r == 1 {
        return 0.0;
    }
    let half = (r - 1) as f64;
    (2.0 * i as f64 - half) / half * span as f64
}

fn unit(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn random_unit_orthogonal(d: usize, seed: u64, draw: u64, against: Option<&[f64]>) -> Vec<f64> {
    let mut rng = rng_for(seed, &[stream::BOUNDARY, draw]);
    loop {
        let mut r: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(v) = against {
            let t: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(v).for_each(|(a, b)| *a -= t * b);
            // second pass removes the rounding residue
            let t: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(v).for_each(|(a, b)| *a -= t * b);
        }
        if unit(&mut r) > 1e-6 {
            return r;
        }
    }
}

/// Probes `model` on an `R×R` grid around the single sample `x` (`C×H×W`
/// or `1×C×H×W`) with true label `y`.
pub fn boundary_map(model: &impl Classifier, x: &Tensor, y: usize, span: f32, resolution: usize, seed: u64) -> Result<BoundaryMap> {
    if resolution == 0 || resolution % 2 == 0 {
        return Err(Error::InvalidArgument(format!("resolution {resolution} must be odd")));
    }
    if !(span >= 0.0 && span.is_finite()) {
        return Err(Error::InvalidArgument(format!("span {span} must be finite and >= 0")));
    }
    let x = match x.ndim() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            x.clone().reshape(s)?
        }
        4 if x.batch() == 1 => x.clone(),
        _ => return Err(Error::Shape(format!("boundary map takes one sample, got {:?}", x.shape()))),
    };
    if y >= model.num_classes() {
        return Err(Error::LabelOutOfRange { label: y, classes: model.num_classes() });
    }
    let d = x.numel();
    let (_, logits, g) = model.loss_and_input_grad(&x, &[y], LossKind::CrossEntropy)?;
    let center_class = logits.argmax_rows()[0];
    let mut v: Vec<f64> = g.data().iter().map(|&t| t as f64).collect();
    let finite = v.iter().all(|t| t.is_finite());
    let fallback_direction = !finite || unit(&mut v) == 0.0;
    if fallback_direction {
        v = random_unit_orthogonal(d, seed, 1, None);
    }
    let u = random_unit_orthogonal(d, seed, 0, Some(&v));
    let r = resolution;
    let mut grid = vec![0usize; r * r];
    let mut min_radius = f64::INFINITY;
    let base = x.data();
    for row in 0..r {
        let b = offset(r - 1 - row, r, span);
        let mut batch = Vec::with_capacity(r * d);
        for col in 0..r {
            let a = offset(col, r, span);
            batch.extend((0..d).map(|j| (base[j] as f64 + a * u[j] + b * v[j]).clamp(0.0, 1.0) as f32));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = r;
        let preds = model.logits(&Tensor::new(shape, batch)?)?.argmax_rows();
        for (col, p) in preds.into_iter().enumerate() {
            grid[row * r + col] = p;
            if p != y {
                let a = offset(col, r, span);
                min_radius = min_radius.min((a * a + b * b).sqrt());
            }
        }
    }
    Ok(BoundaryMap {
        resolution,
        grid,
        u: u.iter().map(|&t| t as f32).collect(),
        v: v.iter().map(|&t| t as f32).collect(),
        span,
        label: y,
        center_class,
        min_misclass_radius: min_radius,
        fallback_direction,
    })
}
