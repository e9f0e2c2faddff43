//! Convolution filter grids and PCA over flattened filters.

use crate::error::{Error, Result};
use crate::nn::spec::param_name;
use crate::nn::{LayerKind, Model};
use crate::tensor::Tensor;

pub const PCA_TOLERANCE: f64 = 1e-8;
pub const PCA_MAX_ITERATIONS: usize = 1000;

/// Principal axes of a set of row vectors, largest variance first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Maps `x` to the mean plus its projection on the components.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut out = self.mean.clone();
        for c in &self.components {
            let t: f64 = centered.iter().zip(c).map(|(a, b)| a * b).sum();
            for (o, v) in out.iter_mut().zip(c) {
                *o += t * v;
            }
        }
        out
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let t: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= t * y;
        }
    }
}

/// Top-`k` principal components of `rows` by power iteration on the sample
/// covariance with deflation. Directions without variance are completed
/// with Gram-Schmidt over the canonical basis.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("pca needs equally long, non-empty rows".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("pca components {k} must be in 1..={d}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0f64; d * d];
    for r in rows {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += a * (r[j] - mean[j]) / n as f64;
            }
        }
    }
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.01 * ((j + c) % d) as f64).collect();
        orthogonalize(&mut v, &components);
        let mut lambda = 0.0;
        let mut ok = normalize(&mut v) > 0.0;
        for _ in 0..PCA_MAX_ITERATIONS {
            if !ok {
                break;
            }
            let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
            orthogonalize(&mut w, &components);
            let norm = normalize(&mut w);
            if norm <= scale * 1e-12 {
                ok = false;
                break;
            }
            lambda = norm;
            let diff = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            if diff < PCA_TOLERANCE {
                break;
            }
        }
        if !ok {
            // no variance left: complete the basis deterministically
            lambda = 0.0;
            v = (0..d)
                .map(|j| {
                    let mut e = vec![0.0; d];
                    e[j] = 1.0;
                    orthogonalize(&mut e, &components);
                    e
                })
                .max_by(|a, b| {
                    let na: f64 = a.iter().map(|x| x * x).sum();
                    let nb: f64 = b.iter().map(|x| x * x).sum();
                    na.total_cmp(&nb)
                })
                .expect("d > 0");
            normalize(&mut v);
        }
        // deflation: later components are searched in the orthogonal complement
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }
    Ok(Pca { mean, components, eigenvalues })
}

/// Filter bank of conv layer `layer` as rows of length `C·k·k`, plus `(C, k)`.
pub fn conv_filters(model: &Model, layer: usize) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    match model.spec().layers.get(layer) {
        Some(LayerKind::Conv2d { .. }) => {}
        Some(other) => return Err(Error::InvalidArgument(format!("layer {layer} is {}, not conv2d", other.name()))),
        None => return Err(Error::InvalidArgument(format!("model has no layer {layer}"))),
    }
    let w = &model.params()[&param_name(layer, "weight")];
    let (o, c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let len = c * k * k;
    Ok(((0..o).map(|i| w.data()[i * len..(i + 1) * len].iter().map(|&v| v as f64).collect()).collect(), c, k))
}

/// Tiles filters (or, with `pca_components`, the top principal components of
/// the flattened filters) into one image. Each tile is min-max normalized to
/// [0, 1]; three-channel filters render in color, others show their channels
/// side by side in gray. Tiles sit on a 1-pixel white lattice.
pub fn kernel_grid(model: &Model, layer: usize, pca_components: Option<usize>) -> Result<Tensor> {
    let (filters, c, k) = conv_filters(model, layer)?;
    let tiles = match pca_components {
        Some(n) => pca(&filters, n)?.components,
        None => filters,
    };
    Ok(tile(&tiles, c, k))
}

fn tile(tiles: &[Vec<f64>], c: usize, k: usize) -> Tensor {
    let color = c == 3;
    let out_c = if color { 3 } else { 1 };
    let (th, tw) = if color { (k, k) } else { (k, c * k + (c - 1)) };
    let cols = (tiles.len() as f64).sqrt().ceil() as usize;
    let rows = tiles.len().div_ceil(cols);
    let (h, w) = (rows * (th + 1) + 1, cols * (tw + 1) + 1);
    let mut img = vec![1.0f32; out_c * h * w];
    for (t, f) in tiles.iter().enumerate() {
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm = |v: f64| if hi > lo { ((v - lo) / (hi - lo)) as f32 } else { 0.5 };
        let (r0, c0) = ((t / cols) * (th + 1) + 1, (t % cols) * (tw + 1) + 1);
        for ch in 0..c {
            for y in 0..k {
                for x in 0..k {
                    let v = norm(f[(ch * k + y) * k + x]);
                    let (oc, ox) = if color { (ch, x) } else { (0, ch * (k + 1) + x) };
                    img[(oc * h + r0 + y) * w + c0 + ox] = v;
                }
            }
        }
    }
    Tensor::new([out_c, h, w], img).expect("grid shape")
}
