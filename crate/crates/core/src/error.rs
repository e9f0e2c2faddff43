use thiserror::Error;

/// Failures raised while reading checkpoint or dataset containers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("container kind mismatch: found {found}, expected {expected}")]
    KindMismatch { found: u8, expected: u8 },
    #[error("truncated container ({0} bytes)")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed record: {0}")]
    Malformed(String),
}

/// IDX parsing failures, each named distinctly.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("IDX magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    Magic { expected: u32, found: u32 },
    #[error("IDX truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec at layer {index}: {reason}")]
    Spec { index: usize, reason: String },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("gradient access attempted through a forward-only oracle")]
    GradientAccess,
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("zero baseline error for corruption `{0}`")]
    ZeroBaseline(String),
    #[error("unimplemented: {0}")]
    Unimplemented(String),
    #[error("container: {0}")]
    Container(#[from] ContainerError),
    #[error("idx: {0}")]
    Idx(#[from] IdxError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error families, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Spec { .. }
            | Error::InvalidArgument(_)
            | Error::Unimplemented(_)
            | Error::ParamMismatch(_) => ErrorClass::Config,
            Error::LabelOutOfRange { .. }
            | Error::EmptyDataset
            | Error::EmptyResult(_)
            | Error::Container(_)
            | Error::Idx(_)
            | Error::Json(_)
            | Error::ZeroBaseline(_) => ErrorClass::Data,
            Error::Shape(_) | Error::NonFinite(_) | Error::GradientAccess => ErrorClass::Numeric,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
