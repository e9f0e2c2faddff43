//! Classification losses with analytic gradients w.r.t. logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Guard added to the DLR denominator against exact ties.
pub const DLR_TAU: f64 = 1e-12;

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if logits.ndim() != 2 {
        return Err(Error::Shape(format!("logits must be N×K, got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok((n, k))
}

/// Numerically stable log-softmax of one row, in f64.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.numel());
    for i in 0..logits.batch() {
        let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
        out.extend(log_softmax(&row).into_iter().map(|v| v.exp() as f32));
    }
    Tensor::new(vec![logits.batch(), k], out).unwrap()
}

/// Mean smoothed cross-entropy over the batch; gradient is
/// `(softmax - smoothed_one_hot) / N`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], smoothing: f32) -> Result<(f32, Tensor)> {
    let (n, k) = check_labels(logits, labels)?;
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::InvalidArgument(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let s = smoothing as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
        let lsm = log_softmax(&row);
        for (j, &l) in lsm.iter().enumerate() {
            let target = if j == y { 1.0 - s + s / k as f64 } else { s / k as f64 };
            total -= target * l;
            grad.push(((l.exp() - target) / n as f64) as f32);
        }
    }
    let loss = (total / n as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy".into()));
    }
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}

/// Unsmoothed per-sample cross-entropy; the gradient is that of the *sum*.
pub fn cross_entropy_per_sample(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f32>, Tensor)> {
    let (n, k) = check_labels(logits, labels)?;
    let mut losses = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * k);
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
        let lsm = log_softmax(&row);
        losses.push(-lsm[y] as f32);
        for (j, &l) in lsm.iter().enumerate() {
            let t = if j == y { 1.0 } else { 0.0 };
            grad.push((l.exp() - t) as f32);
        }
    }
    Ok((losses, Tensor::new(vec![n, k], grad)?))
}

/// Indices sorted by descending logit, lowest index first among ties.
fn descending_order(row: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn best_other(row: &[f32], y: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if i != y && (best == usize::MAX || v > row[best]) {
            best = i;
        }
    }
    best
}

/// Difference-of-logits-ratio loss `-(z_y - max_{i≠y} z_i) / (z_π1 - z_π3 + τ)`
/// per sample, with the gradient of the per-sample sum.
pub fn dlr_loss(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f32>, Tensor)> {
    let (n, k) = check_labels(logits, labels)?;
    if k < 3 {
        return Err(Error::InvalidArgument(format!("DLR loss needs at least 3 classes, got {k}")));
    }
    let mut losses = Vec::with_capacity(n);
    let mut grad = vec![0.0f32; n * k];
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let order = descending_order(row);
        let (p1, p3) = (order[0], order[2]);
        let other = best_other(row, y);
        let a = row[y] as f64 - row[other] as f64;
        let b = row[p1] as f64 - row[p3] as f64 + DLR_TAU;
        losses.push((-a / b) as f32);
        let g = &mut grad[i * k..(i + 1) * k];
        g[y] += (-1.0 / b) as f32;
        g[other] += (1.0 / b) as f32;
        g[p1] += (a / (b * b)) as f32;
        g[p3] -= (a / (b * b)) as f32;
    }
    Ok((losses, Tensor::new(vec![n, k], grad)?))
}

/// `max_{i≠y} z_i - z_y`: positive exactly when the sample is misclassified
/// (up to ties), so larger is better for an attacker.
pub fn margin_loss(logits: &Tensor, labels: &[usize]) -> Result<Vec<f32>> {
    check_labels(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            row[best_other(row, y)] - row[y]
        })
        .collect())
}

/// f64 smoothed cross-entropy on raw logits, used by the finite-difference oracle.
pub(crate) fn cross_entropy_f64(logits: &[f64], k: usize, labels: &[usize], smoothing: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let lsm = log_softmax(&logits[i * k..(i + 1) * k]);
        for (j, &l) in lsm.iter().enumerate() {
            let t = if j == y { 1.0 - smoothing + smoothing / k as f64 } else { smoothing / k as f64 };
            total -= t * l;
        }
    }
    total / n as f64
}
