//! Two-dimensional discrete Fourier transforms: radix-2 row-column FFT with a
//! direct transform for other sizes.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DftPath {
    /// Radix-2 when the length is a power of two, direct otherwise.
    Auto,
    Radix2,
    Direct,
}

/// In-place iterative radix-2 FFT. `buf.len()` must be a power of two.
/// The inverse is unnormalized.
pub fn fft_radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let tw = Complex64::from_polar(1.0, ang * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * tw;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
            }
        }
        len <<= 1;
    }
}

/// O(n²) transform; unnormalized inverse.
pub fn dft_direct(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(t, &v)| {
                    let ang = sign * 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, ang)
                })
                .sum()
        })
        .collect()
}

fn transform_1d(buf: &mut [Complex64], inverse: bool, path: DftPath) -> Result<()> {
    let radix2 = match path {
        DftPath::Auto => buf.len().is_power_of_two(),
        DftPath::Radix2 => {
            if !buf.len().is_power_of_two() {
                return Err(Error::InvalidArgument(format!("radix-2 transform needs a power-of-two size, got {}", buf.len())));
            }
            true
        }
        DftPath::Direct => false,
    };
    if radix2 {
        fft_radix2(buf, inverse);
    } else {
        let out = dft_direct(buf, inverse);
        buf.copy_from_slice(&out);
    }
    Ok(())
}

/// Row-column 2-D transform of an `h×w` plane. The inverse divides by `h·w`.
pub fn dft2d(plane: &[Complex64], h: usize, w: usize, inverse: bool, path: DftPath) -> Result<Vec<Complex64>> {
    let mut data = plane.to_vec();
    for r in 0..h {
        transform_1d(&mut data[r * w..(r + 1) * w], inverse, path)?;
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        transform_1d(&mut col, inverse, path)?;
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        for v in &mut data {
            *v *= s;
        }
    }
    Ok(data)
}

pub fn real_plane(plane: &[f32]) -> Vec<Complex64> {
    plane.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radix2_matches_direct() {
        let x: Vec<Complex64> = (0..16).map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64).cos())).collect();
        let mut f = x.clone();
        fft_radix2(&mut f, false);
        let d = dft_direct(&x, false);
        for (a, b) in f.iter().zip(&d) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn radix2_path_rejects_other_sizes() {
        let x = vec![Complex64::new(1.0, 0.0); 12];
        assert!(dft2d(&x, 3, 4, false, DftPath::Radix2).is_err());
        assert!(dft2d(&x, 3, 4, false, DftPath::Auto).is_ok());
    }
}
