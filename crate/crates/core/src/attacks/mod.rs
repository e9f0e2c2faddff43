//! White-box and black-box adversarial attacks and the worst-case ensemble.
//!
//! All attacks evaluate the model with eval-mode semantics and draw their
//! randomness from per-sample streams keyed by `(seed, sample id)`, so the
//! result for a sample does not depend on which other samples share its batch.

mod apgd;
mod ensemble;
mod oracle;
mod square;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use apgd::{apgd, apgd_checkpoints, apgd_traced, ApgdTrace};
pub use ensemble::{
    autoattack, autoattack_with, robust_accuracy, robust_accuracy_sweep, AttackSummary, AutoAttackConfig,
    AutoAttackReport, SampleRecord, SUITE,
};
pub use oracle::{Classifier, LossKind, QueryCounter};
pub use square::{square_attack, square_attack_traced, square_side, SQUARE_HALVING_FRACTIONS, SQUARE_INITIAL_SIDE};

use oracle::eval_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

/// Threat model and iteration schedule of an attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBudget {
    pub norm: Norm,
    /// Radius in [0, 1] image units.
    pub epsilon: f32,
    /// Gradient iterations, or forward queries for black-box attacks.
    pub steps: usize,
    pub step_size: f32,
    pub restarts: usize,
    pub seed: u64,
}

impl AttackBudget {
    pub fn linf(epsilon: f32, steps: usize, step_size: f32, seed: u64) -> Self {
        AttackBudget { norm: Norm::Linf, epsilon, steps, step_size, restarts: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be finite and >= 0", self.epsilon)));
        }
        if self.steps > 0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {} must be > 0", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub adv_inputs: Tensor,
    /// Prediction on the adversarial input differs from the label.
    pub success: Vec<bool>,
    /// Model evaluations per sample (a forward/backward pair counts once).
    pub queries: Vec<usize>,
    pub best_loss: Vec<f32>,
}

fn check_inputs(model: &impl Classifier, x: &Tensor, y: &[usize]) -> Result<()> {
    if x.ndim() != 4 {
        return Err(Error::Shape(format!("attack input must be NCHW, got {:?}", x.shape())));
    }
    if y.len() != x.batch() {
        return Err(Error::Shape(format!("{} labels for {} samples", y.len(), x.batch())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::LabelOutOfRange { label: bad, classes: model.num_classes() });
    }
    Ok(())
}

pub(crate) fn default_ids(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

/// Projects `cand` onto the ε-ball around `x` (per sample) and the [0, 1] box.
pub(crate) fn project(cand: &mut [f32], x: &[f32], norm: Norm, eps: f32) {
    match norm {
        Norm::Linf => {
            for (c, &o) in cand.iter_mut().zip(x) {
                *c = c.clamp(o - eps, o + eps).clamp(0.0, 1.0);
            }
        }
        Norm::L2 => {
            let norm: f64 = cand.iter().zip(x).map(|(&c, &o)| ((c - o) as f64).powi(2)).sum::<f64>().sqrt();
            if norm > eps as f64 {
                let s = (eps as f64 / norm) as f32;
                for (c, &o) in cand.iter_mut().zip(x) {
                    *c = o + (*c - o) * s;
                }
            }
            for c in cand.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
    }
}

/// Signed (Linf) or unit-L2-normalized gradient step of length `alpha`.
pub(crate) fn ascent_step(cur: &mut [f32], g: &[f32], norm: Norm, alpha: f32) {
    match norm {
        Norm::Linf => {
            for (c, &gi) in cur.iter_mut().zip(g) {
                *c += alpha * sign(gi);
            }
        }
        Norm::L2 => {
            let gn = g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if gn > 0.0 {
                let s = (alpha as f64 / gn) as f32;
                for (c, &gi) in cur.iter_mut().zip(g) {
                    *c += s * gi;
                }
            }
        }
    }
}

pub(crate) fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Uniform point in the ε-ball (Linf: per coordinate; L2: random direction
/// with uniform radius), clamped to [0, 1].
pub(crate) fn random_start(x: &[f32], norm: Norm, eps: f32, rng: &mut impl rand::Rng) -> Vec<f32> {
    use rand_distr::{Distribution, StandardNormal};
    let mut out: Vec<f32> = match norm {
        Norm::Linf => x.iter().map(|&v| v + rng.random_range(-1.0f32..=1.0) * eps).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = x.iter().map(|_| StandardNormal.sample(rng)).collect();
            let dn = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            let r = rng.random::<f64>() * eps as f64;
            x.iter().zip(&dir).map(|(&v, d)| v + (d / dn * r) as f32).collect()
        }
    };
    project(&mut out, x, norm, eps);
    out
}

fn finish(model: &impl Classifier, adv: Tensor, y: &[usize], queries: Vec<usize>, best_loss: Vec<f32>) -> Result<AttackOutcome> {
    let pred = model.logits(&adv)?.argmax_rows();
    let success = pred.iter().zip(y).map(|(p, l)| p != l).collect();
    Ok(AttackOutcome { adv_inputs: adv, success, queries, best_loss })
}

fn unchanged(model: &impl Classifier, x: &Tensor, y: &[usize], loss: LossKind) -> Result<AttackOutcome> {
    let (losses, _) = eval_loss(model, x, y, loss)?;
    finish(model, x.clone(), y, vec![1; y.len()], losses)
}

/// Single-step sign attack: `clamp(x + ε·sign(∇ₓ CE), 0, 1)`.
pub fn fgsm(model: &impl Classifier, x: &Tensor, y: &[usize], budget: &AttackBudget) -> Result<AttackOutcome> {
    budget.validate()?;
    check_inputs(model, x, y)?;
    let (_, _, g) = model.loss_and_input_grad(x, y, LossKind::CrossEntropy)?;
    g.ensure_finite("attack gradient")?;
    let mut adv = x.clone();
    for (a, &gi) in adv.data_mut().iter_mut().zip(g.data()) {
        *a = (*a + budget.epsilon * sign(gi)).clamp(0.0, 1.0);
    }
    let (losses, _) = eval_loss(model, &adv, y, LossKind::CrossEntropy)?;
    finish(model, adv, y, vec![2; y.len()], losses)
}

/// Projected sign-gradient ascent on cross-entropy. The returned input is the
/// highest-loss point seen, starting from the clean input itself.
pub fn pgd(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    random_start: bool,
) -> Result<AttackOutcome> {
    pgd_ids(model, x, y, budget, random_start, &default_ids(x.batch()))
}

pub(crate) fn pgd_ids(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    random_start_on: bool,
    ids: &[u64],
) -> Result<AttackOutcome> {
    budget.validate()?;
    check_inputs(model, x, y)?;
    if budget.steps == 0 {
        return Err(Error::InvalidArgument("pgd needs at least one step".into()));
    }
    if budget.epsilon == 0.0 {
        return unchanged(model, x, y, LossKind::CrossEntropy);
    }
    let n = x.batch();
    let d = x.row_len();
    let (mut best_loss, _) = eval_loss(model, x, y, LossKind::CrossEntropy)?;
    let mut best = x.clone();
    let mut queries = vec![1usize; n];
    for restart in 0..budget.restarts.max(1) {
        let mut cur = x.clone();
        if random_start_on {
            for i in 0..n {
                let mut rng = crate::rng::rng_for(budget.seed, &[crate::rng::stream::ATTACK, ids[i], restart as u64]);
                let start = random_start(x.row(i), budget.norm, budget.epsilon, &mut rng);
                cur.row_mut(i).copy_from_slice(&start);
            }
        }
        for _ in 0..budget.steps {
            let (losses, _, g) = model.loss_and_input_grad(&cur, y, LossKind::CrossEntropy)?;
            g.ensure_finite("attack gradient")?;
            for i in 0..n {
                queries[i] += 1;
                if losses[i] > best_loss[i] {
                    best_loss[i] = losses[i];
                    best.row_mut(i).copy_from_slice(cur.row(i));
                }
                let row = &mut cur.data_mut()[i * d..(i + 1) * d];
                ascent_step(row, &g.data()[i * d..(i + 1) * d], budget.norm, budget.step_size);
                project(row, x.row(i), budget.norm, budget.epsilon);
            }
        }
        let (losses, _) = eval_loss(model, &cur, y, LossKind::CrossEntropy)?;
        for i in 0..n {
            queries[i] += 1;
            if losses[i] > best_loss[i] {
                best_loss[i] = losses[i];
                best.row_mut(i).copy_from_slice(cur.row(i));
            }
        }
    }
    finish(model, best, y, queries, best_loss)
}
