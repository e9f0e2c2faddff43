//! Worst-case ensemble over [APGD-CE, APGD-DLR, Square].

use serde::{Deserialize, Serialize};

use super::apgd::apgd_ids;
use super::oracle::{Classifier, LossKind};
use super::square::square_ids;
use super::{check_inputs, AttackBudget, AttackOutcome, Norm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoAttackConfig {
    pub epsilon: f32,
    pub apgd_steps: usize,
    pub apgd_restarts: usize,
    pub square_queries: usize,
    pub seed: u64,
}

impl AutoAttackConfig {
    pub fn new(epsilon: f32) -> Self {
        AutoAttackConfig { epsilon, apgd_steps: 100, apgd_restarts: 1, square_queries: 1000, seed: 0 }
    }

    pub fn apgd_budget(&self) -> AttackBudget {
        AttackBudget {
            norm: Norm::Linf,
            epsilon: self.epsilon,
            steps: self.apgd_steps,
            step_size: 2.0 * self.epsilon.max(f32::MIN_POSITIVE),
            restarts: self.apgd_restarts,
            seed: self.seed,
        }
    }

    pub fn square_budget(&self) -> AttackBudget {
        AttackBudget {
            norm: Norm::Linf,
            epsilon: self.epsilon,
            steps: self.square_queries,
            step_size: 1.0,
            restarts: 1,
            seed: self.seed,
        }
    }
}

pub const SUITE: [&str; 3] = ["apgd-ce", "apgd-dlr", "square"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub name: String,
    /// Samples the attack was run on (still robust when it started).
    pub attacked: usize,
    pub succeeded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    pub clean_correct: bool,
    /// One entry per suite attack; `None` when the attack did not run on the sample.
    pub success: Vec<Option<bool>>,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoAttackReport {
    pub robust: Vec<bool>,
    pub clean_correct: Vec<bool>,
    pub attacks: Vec<AttackSummary>,
    pub samples: Vec<SampleRecord>,
    /// The successful adversarial input per sample, or the clean input.
    pub adv_inputs: Tensor,
}

pub fn autoattack(model: &impl Classifier, x: &Tensor, y: &[usize], epsilon: f32) -> Result<(Vec<bool>, AutoAttackReport)> {
    autoattack_with(model, x, y, &AutoAttackConfig::new(epsilon))
}

pub fn autoattack_with(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    cfg: &AutoAttackConfig,
) -> Result<(Vec<bool>, AutoAttackReport)> {
    let ids: Vec<u64> = (0..x.batch() as u64).collect();
    let report = autoattack_ids(model, x, y, cfg, &ids)?;
    Ok((report.robust.clone(), report))
}

/// Runs one constituent attack of the suite by name on every given sample.
pub(crate) fn run_member(
    model: &impl Classifier,
    name: &str,
    x: &Tensor,
    y: &[usize],
    cfg: &AutoAttackConfig,
    ids: &[u64],
) -> Result<AttackOutcome> {
    match name {
        "apgd-ce" => Ok(apgd_ids(model, x, y, &cfg.apgd_budget(), LossKind::CrossEntropy, ids)?.0),
        "apgd-dlr" => Ok(apgd_ids(model, x, y, &cfg.apgd_budget(), LossKind::Dlr, ids)?.0),
        "square" => Ok(square_ids(model, x, y, &cfg.square_budget(), ids)?.0),
        other => Err(Error::InvalidArgument(format!("unknown attack `{other}`"))),
    }
}

pub(crate) fn autoattack_ids(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    cfg: &AutoAttackConfig,
    ids: &[u64],
) -> Result<AutoAttackReport> {
    check_inputs(model, x, y)?;
    let n = x.batch();
    let pred = model.logits(x)?.argmax_rows();
    let clean_correct: Vec<bool> = pred.iter().zip(y).map(|(p, l)| p == l).collect();
    let mut robust = clean_correct.clone();
    let mut adv_inputs = x.clone();
    let mut samples: Vec<SampleRecord> = (0..n)
        .map(|i| SampleRecord { index: ids[i], clean_correct: clean_correct[i], success: vec![None; SUITE.len()], queries: 1 })
        .collect();
    let mut attacks = Vec::new();
    for (a, name) in SUITE.iter().enumerate() {
        if *name == "apgd-dlr" && model.num_classes() < 3 {
            attacks.push(AttackSummary { name: name.to_string(), attacked: 0, succeeded: 0 });
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|&i| robust[i]).collect();
        let mut succeeded = 0;
        if !idx.is_empty() {
            let xs = x.select(&idx)?;
            let ys: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let sub_ids: Vec<u64> = idx.iter().map(|&i| ids[i]).collect();
            let out = run_member(model, name, &xs, &ys, cfg, &sub_ids)?;
            for (k, &i) in idx.iter().enumerate() {
                samples[i].success[a] = Some(out.success[k]);
                samples[i].queries += out.queries[k];
                if out.success[k] {
                    robust[i] = false;
                    succeeded += 1;
                    adv_inputs.row_mut(i).copy_from_slice(out.adv_inputs.row(k));
                }
            }
        }
        attacks.push(AttackSummary { name: name.to_string(), attacked: idx.len(), succeeded });
    }
    Ok(AutoAttackReport { robust, clean_correct, attacks, samples, adv_inputs })
}

const CHUNK: usize = 128;

/// Fraction of samples that are clean-correct and survive the whole suite.
pub fn robust_accuracy(model: &impl Classifier, images: &Tensor, labels: &[usize], cfg: &AutoAttackConfig) -> Result<f64> {
    Ok(robust_accuracy_sweep(model, images, labels, &[cfg.epsilon], cfg)?[0])
}

/// Robust accuracy at several radii (ascending). A sample broken at a smaller
/// radius counts as broken at every larger one, since the adversarial input
/// found there lies inside the larger ball too.
pub fn robust_accuracy_sweep(
    model: &impl Classifier,
    images: &Tensor,
    labels: &[usize],
    epsilons: &[f32],
    cfg: &AutoAttackConfig,
) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("epsilons must be ascending".into()));
    }
    let n = labels.len();
    let mut broken = vec![false; n];
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let c = AutoAttackConfig { epsilon: eps, ..cfg.clone() };
        let mut robust_count = 0usize;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let xs = images.select(&idx)?;
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let rep = autoattack_ids(model, &xs, &labels[start..end], &c, &ids)?;
            for (k, &i) in idx.iter().enumerate() {
                if !rep.robust[k] {
                    broken[i] = true;
                }
                if !broken[i] {
                    robust_count += 1;
                }
            }
        }
        out.push(robust_count as f64 / n as f64);
    }
    Ok(out)
}
