//! Model access used by attacks, and a forward-only wrapper for black-box use.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy_per_sample, dlr_loss, margin_loss};
use crate::nn::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Dlr,
    /// `max_{i≠y} z_i − z_y`; forward-only, no gradient form is offered.
    Margin,
}

impl LossKind {
    fn per_sample(self, logits: &Tensor, y: &[usize]) -> Result<(Vec<f32>, Option<Tensor>)> {
        match self {
            LossKind::CrossEntropy => cross_entropy_per_sample(logits, y).map(|(l, g)| (l, Some(g))),
            LossKind::Dlr => dlr_loss(logits, y).map(|(l, g)| (l, Some(g))),
            LossKind::Margin => margin_loss(logits, y).map(|l| (l, None)),
        }
    }
}

/// What an attack may ask of a model. Evaluations are eval-mode and must not
/// mutate the model.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    /// Per-sample losses, logits, and the input gradient of the summed loss.
    fn loss_and_input_grad(&self, x: &Tensor, y: &[usize], loss: LossKind) -> Result<(Vec<f32>, Tensor, Tensor)>;
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Model::logits(self, x)
    }

    fn loss_and_input_grad(&self, x: &Tensor, y: &[usize], loss: LossKind) -> Result<(Vec<f32>, Tensor, Tensor)> {
        let (logits, cache) = self.forward_eval(x, true)?;
        let (losses, grad) = loss.per_sample(&logits, y)?;
        let grad = grad.ok_or_else(|| Error::InvalidArgument("margin loss has no gradient form".into()))?;
        let dx = self.backward_input(&cache.unwrap(), &grad)?;
        Ok((losses, logits, dx))
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        (**self).logits(x)
    }

    fn loss_and_input_grad(&self, x: &Tensor, y: &[usize], loss: LossKind) -> Result<(Vec<f32>, Tensor, Tensor)> {
        (**self).loss_and_input_grad(x, y, loss)
    }
}

/// Forward-only view of a classifier. Counts per-sample forward queries and
/// refuses every gradient request, recording the attempt.
pub struct QueryCounter<'a, C: Classifier + ?Sized> {
    inner: &'a C,
    forward_samples: Cell<usize>,
    gradient_calls: Cell<usize>,
}

impl<'a, C: Classifier + ?Sized> QueryCounter<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        QueryCounter { inner, forward_samples: Cell::new(0), gradient_calls: Cell::new(0) }
    }

    /// Total samples passed through forward evaluations.
    pub fn forward_samples(&self) -> usize {
        self.forward_samples.get()
    }

    pub fn gradient_calls(&self) -> usize {
        self.gradient_calls.get()
    }
}

impl<C: Classifier + ?Sized> Classifier for QueryCounter<'_, C> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_samples.set(self.forward_samples.get() + x.batch());
        self.inner.logits(x)
    }

    fn loss_and_input_grad(&self, _: &Tensor, _: &[usize], _: LossKind) -> Result<(Vec<f32>, Tensor, Tensor)> {
        self.gradient_calls.set(self.gradient_calls.get() + 1);
        Err(Error::GradientAccess)
    }
}

/// Forward-only per-sample loss.
pub(crate) fn eval_loss(model: &impl Classifier, x: &Tensor, y: &[usize], loss: LossKind) -> Result<(Vec<f32>, Tensor)> {
    let logits = model.logits(x)?;
    let (losses, _) = loss.per_sample(&logits, y)?;
    Ok((losses, logits))
}
