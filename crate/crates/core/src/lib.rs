//! Desk-scale robustness toolkit for small image classifiers: a minimal
//! differentiable network core, adversarial attacks, robust training,
//! corruption benchmarking and analysis tools.

pub mod analyze;
pub mod attacks;
pub mod augment;
pub mod container;
pub mod corruptions;
pub mod data;
pub mod error;
pub mod image;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Tensor;
