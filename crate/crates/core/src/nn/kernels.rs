//! Per-layer forward and backward kernels on flat NCHW buffers.
//!
//! Every kernel processes samples independently (except batch statistics in
//! train-mode normalization), and the reduction order inside a sample never
//! depends on the batch size. Attacks rely on this: a sample's logits and
//! input gradient are bit-identical whether it is evaluated alone or inside a
//! larger batch.

use num_traits::Float;

pub trait Real: Float + std::iter::Sum + Send + Sync + std::fmt::Debug + 'static {
    fn c(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn c(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const STYLE_EPS: f64 = 1e-5;

/// Eight-lane dot product with a fixed reduction tree.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
pub fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, o: usize, k: usize, stride: usize, pad: usize) -> Self {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { c, h, w, o, k, stride, pad, ho, wo }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<F: Real>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &mut cols[r * p..(r + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + ih as usize) * g.w..(ci * g.h + ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *d = if iw < 0 || iw >= g.w as isize { F::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &cols[r * p..(r + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + ih as usize) * g.w;
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dx[base + iw as usize] = dx[base + iw as usize] + row[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Real>(x: &[F], n: usize, g: &ConvGeom, weight: &[F], bias: &[F]) -> Vec<F> {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![F::zero(); n * g.o * p];
    let mut cols = vec![F::zero(); r * p];
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let os = &mut out[s * g.o * p..(s + 1) * g.o * p];
        for o in 0..g.o {
            let dst = &mut os[o * p..(o + 1) * p];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            let wrow = &weight[o * r..(o + 1) * r];
            for (ri, &wv) in wrow.iter().enumerate() {
                axpy(dst, wv, &cols[ri * p..(ri + 1) * p]);
            }
        }
    }
    out
}

pub struct ParamGrads<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

pub fn conv2d_backward<F: Real>(
    x: &[F],
    n: usize,
    g: &ConvGeom,
    weight: &[F],
    dout: &[F],
    want_input: bool,
    want_params: bool,
) -> (Option<Vec<F>>, Option<ParamGrads<F>>) {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut dx = want_input.then(|| vec![F::zero(); n * in_len]);
    let mut pg = want_params.then(|| ParamGrads { weight: vec![F::zero(); g.o * r], bias: vec![F::zero(); g.o] });
    let mut cols = vec![F::zero(); r * p];
    let mut dcols = vec![F::zero(); r * p];
    for s in 0..n {
        let ds = &dout[s * g.o * p..(s + 1) * g.o * p];
        if let Some(pg) = pg.as_mut() {
            im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
            for o in 0..g.o {
                let drow = &ds[o * p..(o + 1) * p];
                pg.bias[o] = pg.bias[o] + drow.iter().copied().sum::<F>();
                let wg = &mut pg.weight[o * r..(o + 1) * r];
                for (ri, v) in wg.iter_mut().enumerate() {
                    *v = *v + dot(drow, &cols[ri * p..(ri + 1) * p]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.iter_mut().for_each(|v| *v = F::zero());
            for o in 0..g.o {
                let drow = &ds[o * p..(o + 1) * p];
                let wrow = &weight[o * r..(o + 1) * r];
                for (ri, &wv) in wrow.iter().enumerate() {
                    axpy(&mut dcols[ri * p..(ri + 1) * p], wv, drow);
                }
            }
            col2im(&dcols, g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    (dx, pg)
}

pub fn linear_forward<F: Real>(x: &[F], n: usize, inp: usize, out: usize, weight: &[F], bias: &[F]) -> Vec<F> {
    let mut y = vec![F::zero(); n * out];
    for s in 0..n {
        let xs = &x[s * inp..(s + 1) * inp];
        for j in 0..out {
            y[s * out + j] = bias[j] + dot(&weight[j * inp..(j + 1) * inp], xs);
        }
    }
    y
}

pub fn linear_backward<F: Real>(
    x: &[F],
    n: usize,
    inp: usize,
    out: usize,
    weight: &[F],
    dout: &[F],
    want_input: bool,
    want_params: bool,
) -> (Option<Vec<F>>, Option<ParamGrads<F>>) {
    let mut dx = want_input.then(|| vec![F::zero(); n * inp]);
    let mut pg = want_params.then(|| ParamGrads { weight: vec![F::zero(); out * inp], bias: vec![F::zero(); out] });
    for s in 0..n {
        let xs = &x[s * inp..(s + 1) * inp];
        for j in 0..out {
            let d = dout[s * out + j];
            if let Some(dx) = dx.as_mut() {
                axpy(&mut dx[s * inp..(s + 1) * inp], d, &weight[j * inp..(j + 1) * inp]);
            }
            if let Some(pg) = pg.as_mut() {
                axpy(&mut pg.weight[j * inp..(j + 1) * inp], d, xs);
                pg.bias[j] = pg.bias[j] + d;
            }
        }
    }
    (dx, pg)
}

pub fn relu_forward<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect()
}

pub fn relu_backward<F: Real>(x: &[F], dout: &[F]) -> Vec<F> {
    x.iter().zip(dout).map(|(&v, &d)| if v > F::zero() { d } else { F::zero() }).collect()
}

#[inline]
fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub fn silu_forward<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward<F: Real>(x: &[F], dout: &[F]) -> Vec<F> {
    x.iter()
        .zip(dout)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (F::one() + v * (F::one() - s))
        })
        .collect()
}

/// Non-overlapping k×k max pooling; records the flat input index of each winner
/// (first maximum in row-major window order).
pub fn maxpool_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize, k: usize) -> (Vec<F>, Vec<u32>) {
    let (ho, wo) = (h / k, w / k);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * k * w + ow * k;
                for a in 0..k {
                    for b in 0..k {
                        let i = base + (oh * k + a) * w + ow * k + b;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward<F: Real>(in_len: usize, idx: &[u32], dout: &[F]) -> Vec<F> {
    let mut dx = vec![F::zero(); in_len];
    for (&i, &d) in idx.iter().zip(dout) {
        dx[i as usize] = dx[i as usize] + d;
    }
    dx
}

pub fn avgpool_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let (ho, wo) = (h / k, w / k);
    let scale = F::c(1.0 / (k * k) as f64);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut s = F::zero();
                for a in 0..k {
                    for b in 0..k {
                        s = s + x[base + (oh * k + a) * w + ow * k + b];
                    }
                }
                out.push(s * scale);
            }
        }
    }
    out
}

pub fn avgpool_backward<F: Real>(n: usize, c: usize, h: usize, w: usize, k: usize, dout: &[F]) -> Vec<F> {
    let (ho, wo) = (h / k, w / k);
    let scale = F::c(1.0 / (k * k) as f64);
    let mut dx = vec![F::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let d = dout[(plane * ho + oh) * wo + ow] * scale;
                for a in 0..k {
                    for b in 0..k {
                        let i = base + (oh * k + a) * w + ow * k + b;
                        dx[i] = dx[i] + d;
                    }
                }
            }
        }
    }
    dx
}

/// Normalized binomial coefficients `C(m-1, i) / 2^(m-1)`.
pub fn binomial_kernel(m: usize) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 1..m {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let total: f64 = row.iter().sum();
    row.iter().map(|v| v / total).collect()
}

fn blur_taps<F: Real>(m: usize) -> Vec<F> {
    let b = binomial_kernel(m);
    let mut taps = Vec::with_capacity(m * m);
    for a in &b {
        for c in &b {
            taps.push(F::c(a * c));
        }
    }
    taps
}

/// Zero-padded binomial blur evaluated only at strided output positions.
pub fn blurpool_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize, stride: usize, m: usize) -> Vec<F> {
    let taps = blur_taps::<F>(m);
    let pl = (m - 1) / 2;
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut s = F::zero();
                for a in 0..m {
                    let ih = (oh * stride + a) as isize - pl as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for b in 0..m {
                        let iw = (ow * stride + b) as isize - pl as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        s = s + taps[a * m + b] * x[base + ih as usize * w + iw as usize];
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

pub fn blurpool_backward<F: Real>(n: usize, c: usize, h: usize, w: usize, stride: usize, m: usize, dout: &[F]) -> Vec<F> {
    let taps = blur_taps::<F>(m);
    let pl = (m - 1) / 2;
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut dx = vec![F::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let d = dout[(plane * ho + oh) * wo + ow];
                for a in 0..m {
                    let ih = (oh * stride + a) as isize - pl as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for b in 0..m {
                        let iw = (ow * stride + b) as isize - pl as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let i = base + ih as usize * w + iw as usize;
                        dx[i] = dx[i] + taps[a * m + b] * d;
                    }
                }
            }
        }
    }
    dx
}

/// Haar low-low subband of each 2×2 block, scaled so a constant image keeps its value.
pub fn dwt_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::c(0.25);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let i = base + 2 * oh * w + 2 * ow;
                let low_top = x[i] + x[i + 1];
                let low_bottom = x[i + w] + x[i + w + 1];
                out.push((low_top + low_bottom) * quarter);
            }
        }
    }
    out
}

pub fn dwt_backward<F: Real>(n: usize, c: usize, h: usize, w: usize, dout: &[F]) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::c(0.25);
    let mut dx = vec![F::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let d = dout[(plane * ho + oh) * wo + ow] * quarter;
                let i = base + 2 * oh * w + 2 * ow;
                dx[i] = d;
                dx[i + 1] = d;
                dx[i + w] = d;
                dx[i + w + 1] = d;
            }
        }
    }
    dx
}

pub fn gap_forward<F: Real>(x: &[F], n: usize, c: usize, hw: usize) -> Vec<F> {
    let inv = F::c(1.0 / hw as f64);
    (0..n * c).map(|p| x[p * hw..(p + 1) * hw].iter().copied().sum::<F>() * inv).collect()
}

pub fn gap_backward<F: Real>(n: usize, c: usize, hw: usize, dout: &[F]) -> Vec<F> {
    let inv = F::c(1.0 / hw as f64);
    let mut dx = Vec::with_capacity(n * c * hw);
    for p in 0..n * c {
        let d = dout[p] * inv;
        dx.extend(std::iter::repeat_n(d, hw));
    }
    dx
}

/// Batch-norm intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BnAux<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    pub batch_stats: bool,
}

/// Per-channel batch statistics (mean, biased variance) over (N, spatial).
pub fn bn_batch_stats<F: Real>(x: &[F], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for smp in 0..n {
            let b = (smp * c + ch) * hw;
            s += x[b..b + hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0f64;
        for smp in 0..n {
            let b = (smp * c + ch) * hw;
            q += x[b..b + hw].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    (mean, var)
}

pub fn bn_forward<F: Real>(
    x: &[F],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[F],
    beta: &[F],
    mean: &[f64],
    var: &[f64],
    batch_stats: bool,
) -> (Vec<F>, BnAux<F>) {
    let inv_std: Vec<F> = var.iter().map(|v| F::c(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean_f: Vec<F> = mean.iter().map(|&v| F::c(v)).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    for smp in 0..n {
        for ch in 0..c {
            let b = (smp * c + ch) * hw;
            for i in b..b + hw {
                let xh = (x[i] - mean_f[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, BnAux { xhat, inv_std, batch_stats })
}

pub fn bn_backward<F: Real>(
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[F],
    aux: &BnAux<F>,
    dout: &[F],
    want_params: bool,
) -> (Vec<F>, Option<(Vec<F>, Vec<F>)>) {
    let m = F::c((n * hw) as f64);
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    let mut sum_dxhat = vec![F::zero(); c];
    let mut sum_dxhat_xhat = vec![F::zero(); c];
    for smp in 0..n {
        for ch in 0..c {
            let b = (smp * c + ch) * hw;
            for i in b..b + hw {
                dgamma[ch] = dgamma[ch] + dout[i] * aux.xhat[i];
                dbeta[ch] = dbeta[ch] + dout[i];
                let dxh = dout[i] * gamma[ch];
                sum_dxhat[ch] = sum_dxhat[ch] + dxh;
                sum_dxhat_xhat[ch] = sum_dxhat_xhat[ch] + dxh * aux.xhat[i];
            }
        }
    }
    let mut dx = vec![F::zero(); dout.len()];
    for smp in 0..n {
        for ch in 0..c {
            let b = (smp * c + ch) * hw;
            for i in b..b + hw {
                let dxh = dout[i] * gamma[ch];
                dx[i] = if aux.batch_stats {
                    aux.inv_std[ch] / m * (m * dxh - sum_dxhat[ch] - aux.xhat[i] * sum_dxhat_xhat[ch])
                } else {
                    dxh * aux.inv_std[ch]
                };
            }
        }
    }
    (dx, want_params.then_some((dgamma, dbeta)))
}

/// Instance-statistics exchange (Permuted-AdaIN / CrossNorm): instance `i`
/// is renormalized with the channel mean/std of instance `perm[i]`.
#[derive(Clone, Debug)]
pub struct StyleAux<F> {
    pub perm: Vec<usize>,
    pub xhat: Vec<F>,
    pub std: Vec<F>,
}

pub fn style_forward<F: Real>(x: &[F], n: usize, c: usize, hw: usize, perm: Vec<usize>) -> (Vec<F>, StyleAux<F>) {
    let mut mean = vec![F::zero(); n * c];
    let mut std = vec![F::zero(); n * c];
    for p in 0..n * c {
        let s = &x[p * hw..(p + 1) * hw];
        let mu = s.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
        let var = s.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / hw as f64;
        mean[p] = F::c(mu);
        std[p] = F::c((var + STYLE_EPS).sqrt());
    }
    let mut xhat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    for smp in 0..n {
        let partner = perm[smp];
        for ch in 0..c {
            let p = smp * c + ch;
            let q = partner * c + ch;
            for i in p * hw..(p + 1) * hw {
                let xh = (x[i] - mean[p]) / std[p];
                xhat[i] = xh;
                y[i] = xh * std[q] + mean[q];
            }
        }
    }
    (y, StyleAux { perm, xhat, std })
}

pub fn style_backward<F: Real>(n: usize, c: usize, hw: usize, aux: &StyleAux<F>, dout: &[F]) -> Vec<F> {
    let m = F::c(hw as f64);
    // Gradients reaching the partner statistics.
    let mut dmean = vec![F::zero(); n * c];
    let mut dstd = vec![F::zero(); n * c];
    let mut dx = vec![F::zero(); dout.len()];
    for smp in 0..n {
        let partner = aux.perm[smp];
        for ch in 0..c {
            let p = smp * c + ch;
            let q = partner * c + ch;
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for i in p * hw..(p + 1) * hw {
                sum_d = sum_d + dout[i];
                sum_dx = sum_dx + dout[i] * aux.xhat[i];
            }
            dmean[q] = dmean[q] + sum_d;
            dstd[q] = dstd[q] + sum_dx;
            // Own normalization: dxhat = dout * std_q.
            let sum_dxhat = sum_d * aux.std[q];
            let sum_dxhat_xhat = sum_dx * aux.std[q];
            let inv = F::one() / aux.std[p];
            for i in p * hw..(p + 1) * hw {
                let dxh = dout[i] * aux.std[q];
                dx[i] = inv / m * (m * dxh - sum_dxhat - aux.xhat[i] * sum_dxhat_xhat);
            }
        }
    }
    for p in 0..n * c {
        for i in p * hw..(p + 1) * hw {
            dx[i] = dx[i] + dmean[p] / m + dstd[p] * aux.xhat[i] / m;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_kernel_sums_to_one() {
        for m in 1..8 {
            let k = binomial_kernel(m);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(binomial_kernel(3), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn conv_identity_kernel() {
        let g = ConvGeom::new(1, 3, 3, 1, 3, 1, 1);
        let x: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let y = conv2d_forward(&x, 1, &g, &w, &[0.0]);
        assert_eq!(y, x);
    }

    #[test]
    fn blurpool_kernel_one_is_subsampling() {
        let x: Vec<f32> = (0..25).map(|v| (v as f32 * 0.37).sin()).collect();
        let y = blurpool_forward(&x, 1, 1, 5, 5, 2, 1);
        let x = &x;
        let expect: Vec<f32> = [0, 2, 4]
            .iter()
            .flat_map(|&r| [0, 2, 4].iter().map(move |&c| x[r * 5 + c]))
            .collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn dwt_keeps_constant() {
        let x = vec![0.3f32; 16];
        assert!(dwt_forward(&x, 1, 1, 4, 4).iter().all(|&v| v == 0.3));
    }
}
