//! Geometric resampling helpers on single `C×H×W` images.

/// Value used for samples falling outside the source image.
#[derive(Clone, Debug, PartialEq)]
pub enum Fill {
    Constant(f32),
    /// One value per channel.
    PerChannel(Vec<f32>),
    /// Clamp coordinates to the border.
    Replicate,
}

#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Bilinear sample of channel plane `p` at fractional pixel coordinates.
pub fn bilinear(p: &[f32], d: Dims, y: f64, x: f64, fill: f32, replicate: bool) -> f32 {
    let (h, w) = (d.h as isize, d.w as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| -> f32 {
        if replicate {
            p[(yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)) as usize]
        } else if yy < 0 || xx < 0 || yy >= h || xx >= w {
            fill
        } else {
            p[(yy * w + xx) as usize]
        }
    };
    if fy == 0.0 && fx == 0.0 {
        return at(y0, x0);
    }
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples every output pixel `(r, c)` from source coordinates `map(r, c)`.
pub fn warp(img: &[f32], d: Dims, fill: &Fill, map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
    let mut out = vec![0.0f32; img.len()];
    for ch in 0..d.c {
        let p = &img[ch * d.plane()..(ch + 1) * d.plane()];
        let (fv, rep) = match fill {
            Fill::Constant(v) => (*v, false),
            Fill::PerChannel(v) => (v[ch], false),
            Fill::Replicate => (0.0, true),
        };
        for r in 0..d.h {
            for c in 0..d.w {
                let (sy, sx) = map(r as f64, c as f64);
                out[ch * d.plane() + r * d.w + c] = bilinear(p, d, sy, sx, fv, rep);
            }
        }
    }
    out
}

/// Rotation by `degrees` about the image center.
pub fn rotate(img: &[f32], d: Dims, degrees: f64, fill: &Fill) -> Vec<f32> {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (d.h as f64 - 1.0) / 2.0;
    let cx = (d.w as f64 - 1.0) / 2.0;
    warp(img, d, fill, |r, col| {
        let (y, x) = (r - cy, col - cx);
        // inverse rotation maps output to source
        (c * y - s * x + cy, s * y + c * x + cx)
    })
}

pub fn translate(img: &[f32], d: Dims, dy: f64, dx: f64, fill: &Fill) -> Vec<f32> {
    warp(img, d, fill, |r, c| (r - dy, c - dx))
}

/// Horizontal shear `x' = x + k·(y − cy)` (or vertical when `vertical`).
pub fn shear(img: &[f32], d: Dims, k: f64, vertical: bool, fill: &Fill) -> Vec<f32> {
    let cy = (d.h as f64 - 1.0) / 2.0;
    let cx = (d.w as f64 - 1.0) / 2.0;
    warp(img, d, fill, |r, c| if vertical { (r - k * (c - cx), c) } else { (r, c - k * (r - cy)) })
}

/// Crops the window `[top, top+ch) × [left, left+cw)` and resizes it bilinearly
/// to the full image size (pixel-center alignment). An identity window
/// reproduces the input exactly.
pub fn resized_crop(img: &[f32], d: Dims, top: usize, left: usize, ch: usize, cw: usize) -> Vec<f32> {
    let sy = ch as f64 / d.h as f64;
    let sx = cw as f64 / d.w as f64;
    warp(img, d, &Fill::Replicate, |r, c| {
        (top as f64 + (r + 0.5) * sy - 0.5, left as f64 + (c + 0.5) * sx - 0.5)
    })
}

pub fn hflip(img: &[f32], d: Dims) -> Vec<f32> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..d.c {
        for r in 0..d.h {
            for c in 0..d.w {
                out[(ch * d.h + r) * d.w + c] = img[(ch * d.h + r) * d.w + (d.w - 1 - c)];
            }
        }
    }
    out
}

/// 2-D convolution of every channel with a normalized kernel, replicate padding.
pub fn filter2d(img: &[f32], d: Dims, kernel: &[f64], ks: usize) -> Vec<f32> {
    let half = (ks / 2) as isize;
    let mut out = vec![0.0f32; img.len()];
    for ch in 0..d.c {
        let p = &img[ch * d.plane()..(ch + 1) * d.plane()];
        for r in 0..d.h as isize {
            for c in 0..d.w as isize {
                let mut acc = 0.0f64;
                for ky in 0..ks as isize {
                    for kx in 0..ks as isize {
                        let k = kernel[(ky as usize) * ks + kx as usize];
                        if k == 0.0 {
                            continue;
                        }
                        let yy = (r + ky - half).clamp(0, d.h as isize - 1) as usize;
                        let xx = (c + kx - half).clamp(0, d.w as isize - 1) as usize;
                        acc += k * p[yy * d.w + xx] as f64;
                    }
                }
                out[ch * d.plane() + r as usize * d.w + c as usize] = acc as f32;
            }
        }
    }
    out
}
