//! Reverse-mode differentiable layers, losses and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod spec;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};
pub use gradcheck::{
    central_difference, finite_diff_grad, finite_diff_grad_with_kinks, max_relative_error, max_relative_error_masked,
    FiniteDiff,
};
pub use loss::{cross_entropy, cross_entropy_per_sample, dlr_loss, margin_loss, softmax_rows};
pub use model::{build_model, ActivationCache, BnBranch, Gradients, Mode, Model, ParamMap};
pub use spec::{LayerKind, ModelSpec};
