//! Binary PPM (P6) encoding and decoding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class id → color; ten maximally distinct colors.
pub const PALETTE: [[u8; 3]; 10] = [
    [0x1f, 0x77, 0xb4],
    [0xff, 0x7f, 0x0e],
    [0x2c, 0xa0, 0x2c],
    [0xd6, 0x27, 0x28],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
    [0xe3, 0x77, 0xc2],
    [0x7f, 0x7f, 0x7f],
    [0xbc, 0xbd, 0x22],
    [0x17, 0xbe, 0xcf],
];

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    /// Row-major, three bytes per pixel.
    pub pixels: Vec<u8>,
}

impl Rgb {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round() as u8
}

/// Converts an `H×W`, `1×H×W` or `3×H×W` tensor to RGB. Without a palette
/// values must lie in [0, 1] and are rounded to 8 bits (one channel is
/// replicated to gray); with a palette values are class ids.
pub fn to_rgb(image: &Tensor, palette: Option<&[[u8; 3]]>) -> Result<Rgb> {
    let (c, h, w) = match *image.shape() {
        [h, w] => (1, h, w),
        [c, h, w] if c == 1 || (c == 3 && palette.is_none()) => (c, h, w),
        _ => return Err(Error::Shape(format!("cannot render a {:?} tensor as an image", image.shape()))),
    };
    let d = image.data();
    let plane = h * w;
    let mut pixels = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        match palette {
            Some(pal) => {
                let v = d[p];
                if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < pal.len()) {
                    return Err(Error::InvalidArgument(format!("class id {v} outside the {}-color palette", pal.len())));
                }
                pixels.extend_from_slice(&pal[v as usize]);
            }
            None => {
                for ch in 0..3 {
                    let v = d[(ch % c) * plane + p];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
                    }
                    pixels.push(quantize(v));
                }
            }
        }
    }
    Ok(Rgb { width: w, height: h, pixels })
}

pub fn render_ppm(image: &Tensor, palette: Option<&[[u8; 3]]>) -> Result<Vec<u8>> {
    Ok(to_rgb(image, palette)?.to_ppm())
}

/// Parses a binary P6 file with maxval 255 (comments are not supported).
pub fn parse_ppm(bytes: &[u8]) -> Result<Rgb> {
    let bad = |m: &str| Error::InvalidArgument(format!("malformed PPM: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("magic is not P6"));
    }
    let width: usize = token()?.parse().map_err(|_| bad("width"))?;
    let height: usize = token()?.parse().map_err(|_| bad("height"))?;
    if token()? != "255" {
        return Err(bad("maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() != start + need {
        return Err(bad(&format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(start))));
    }
    Ok(Rgb { width, height, pixels: bytes[start..].to_vec() })
}
