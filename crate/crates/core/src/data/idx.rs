//! IDX (big-endian) image and label files.

use std::path::Path;

use super::{sha256_hex, Dataset, Provenance};
use crate::error::{IdxError, Result};
use crate::tensor::Tensor;

/// Unsigned-byte, 3 dimensions (N, H, W).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 4 dimensions (N, C, H, W).
pub const IDX_IMAGES_MAGIC_4D: u32 = 0x0000_0804;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let s = bytes.get(at..at + 4).ok_or(IdxError::Truncated { needed: at + 4, available: bytes.len() })?;
    Ok(u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
}

fn body(bytes: &[u8], offset: usize, count: usize) -> Result<&[u8]> {
    let needed = offset + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated { needed, available: bytes.len() }.into());
    }
    Ok(&bytes[offset..needed])
}

/// Parses an image file and a label file. Pixels are scaled by 1/255 and the
/// class count is one more than the largest label.
pub fn load_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0)?;
    let (n, c, h, w, offset) = match magic {
        IDX_IMAGES_MAGIC => (read_u32(images, 4)?, 1, read_u32(images, 8)?, read_u32(images, 12)?, 16),
        IDX_IMAGES_MAGIC_4D => (read_u32(images, 4)?, read_u32(images, 8)?, read_u32(images, 12)?, read_u32(images, 16)?, 20),
        found => return Err(IdxError::Magic { expected: IDX_IMAGES_MAGIC, found }.into()),
    };
    let lmagic = read_u32(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(IdxError::Magic { expected: IDX_LABELS_MAGIC, found: lmagic }.into());
    }
    let ln = read_u32(labels, 4)? as usize;
    let (n, c, h, w) = (n as usize, c as usize, h as usize, w as usize);
    if ln != n {
        return Err(IdxError::CountMismatch { images: n, labels: ln }.into());
    }
    let pixels = body(images, offset, n * c * h * w)?;
    let label_bytes = body(labels, 8, n)?;
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Tensor::new([n, c, h, w], data)?;
    let label_vec: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = label_vec.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        tensor,
        label_vec,
        classes,
        "idx",
        Provenance::Idx { images_sha256: sha256_hex(images), labels_sha256: sha256_hex(labels) },
    )
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<Dataset> {
    load_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// Serializes a dataset to IDX bytes (pixels rounded to 8 bits). Single-channel
/// data uses the 3-dimension layout.
pub fn to_idx(ds: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let [c, h, w] = ds.sample_shape();
    let mut img = Vec::new();
    if c == 1 {
        img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        for d in [ds.len(), h, w] {
            img.extend((d as u32).to_be_bytes());
        }
    } else {
        img.extend(IDX_IMAGES_MAGIC_4D.to_be_bytes());
        for d in [ds.len(), c, h, w] {
            img.extend((d as u32).to_be_bytes());
        }
    }
    img.extend(ds.images().data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::new();
    lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend((ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels().iter().map(|&l| l as u8));
    (img, lab)
}
