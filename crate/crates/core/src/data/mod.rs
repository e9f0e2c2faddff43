//! Datasets: IDX ingestion, the procedural shapes task, out-of-distribution
//! variants, the dataset container, and benchmark reports.

pub mod bench;
mod idx;
mod ood;
mod shapes;

use serde::{Deserialize, Serialize};

use crate::container::{Container, ContainerKind, Record};
use crate::error::{ContainerError, Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, load_idx_files, to_idx, IDX_IMAGES_MAGIC, IDX_IMAGES_MAGIC_4D, IDX_LABELS_MAGIC};
pub use ood::{edge_sketch, otsu_threshold, ood_variants, OodVariant};
pub use shapes::{gen_shapes, v2_split, ShapesConfig, Texture, SHAPE_NAMES};

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Idx { images_sha256: String, labels_sha256: String },
    Generator { name: String, seed: u64 },
    Derived { parent: Box<Provenance>, transform: String, seed: u64 },
}

impl Provenance {
    pub fn describe(&self) -> String {
        match self {
            Provenance::Idx { images_sha256, .. } => format!("idx:{}", &images_sha256[..12.min(images_sha256.len())]),
            Provenance::Generator { name, seed } => format!("{name}(seed={seed})"),
            Provenance::Derived { parent, transform, seed } => format!("{}|{transform}(seed={seed})", parent.describe()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    /// Split tag, e.g. "train", "test", "v2-seed".
    pub split: String,
    pub provenance: Provenance,
}

impl Dataset {
    /// Validates `N > 0`, NCHW layout, values in [0, 1] and labels below `num_classes`.
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: &str, provenance: Provenance) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.ndim() != 4 || images.batch() != labels.len() {
            return Err(Error::Shape(format!("images {:?} for {} labels", images.shape(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: l, classes: num_classes });
        }
        images.ensure_finite("dataset images")?;
        if images.min() < 0.0 || images.max() > 1.0 {
            return Err(Error::InvalidArgument("dataset pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset { images, labels, num_classes, split: split.to_string(), provenance })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, indices: &[usize], split: &str) -> Result<Dataset> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.images.select(indices)?, labels, self.num_classes, split, self.provenance.clone())
    }

    /// First `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, &self.split.clone())
    }
}

const TAG_IMAGES: u8 = 1;
const TAG_LABELS: u8 = 2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    num_classes: usize,
    split: String,
    provenance: Provenance,
}

pub fn save_dataset(ds: &Dataset) -> Vec<u8> {
    let header = DatasetHeader { num_classes: ds.num_classes, split: ds.split.clone(), provenance: ds.provenance.clone() };
    let labels = Tensor::new([ds.len()], ds.labels.iter().map(|&l| l as f32).collect()).expect("labels tensor");
    Container {
        kind: ContainerKind::Dataset,
        header: serde_json::to_string(&header).expect("header serializes"),
        records: vec![
            Record { tag: TAG_IMAGES, name: "images".into(), tensor: ds.images.clone() },
            Record { tag: TAG_LABELS, name: "labels".into(), tensor: labels },
        ],
    }
    .to_bytes()
}

pub fn load_dataset(bytes: &[u8]) -> Result<Dataset> {
    let c = Container::from_bytes(bytes, ContainerKind::Dataset)?;
    let header: DatasetHeader = serde_json::from_str(&c.header)?;
    let find = |tag: u8| {
        c.records
            .iter()
            .find(|r| r.tag == tag)
            .ok_or_else(|| Error::from(ContainerError::Malformed(format!("missing record tag {tag}"))))
    };
    let images = find(TAG_IMAGES)?.tensor.clone();
    let labels = find(TAG_LABELS)?
        .tensor
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::from(ContainerError::Malformed(format!("label value {v}"))))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, labels, header.num_classes, &header.split, header.provenance)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
