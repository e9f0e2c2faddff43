//! Score-based random search over square patches (Linf).

use rand::Rng;

use super::oracle::{eval_loss, Classifier, LossKind, QueryCounter};
use super::{check_inputs, default_ids, AttackBudget, AttackOutcome, Norm};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

/// Initial patch side as a fraction of the image side.
pub const SQUARE_INITIAL_SIDE: f64 = 0.8;
/// Fractions of the query budget at which the patch side halves.
pub const SQUARE_HALVING_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 0.8];

/// Patch side (pixels) for iteration `it` of a `budget`-query run on an image
/// of side `side`.
pub fn square_side(it: usize, budget: usize, side: usize) -> usize {
    let halvings = SQUARE_HALVING_FRACTIONS.iter().filter(|&&f| it as f64 >= f * budget as f64).count();
    let frac = SQUARE_INITIAL_SIDE / (1u64 << halvings) as f64;
    ((frac * side as f64).round() as usize).clamp(1, side)
}

pub fn square_attack<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    Ok(square_ids(model, x, y, budget, &default_ids(x.batch()))?.0)
}

/// Also returns, per sample, the margin loss after every accepted candidate
/// (starting with the initialization) and the wrapper's gradient-call count.
pub fn square_attack_traced<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
) -> Result<(AttackOutcome, Vec<Vec<f32>>, usize)> {
    square_ids(model, x, y, budget, &default_ids(x.batch()))
}

pub(crate) fn square_ids<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    ids: &[u64],
) -> Result<(AttackOutcome, Vec<Vec<f32>>, usize)> {
    let oracle = QueryCounter::new(model);
    let out = run(&oracle, x, y, budget, ids)?;
    Ok((out.0, out.1, oracle.gradient_calls()))
}

fn run<C: Classifier + ?Sized>(
    oracle: &QueryCounter<'_, C>,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    ids: &[u64],
) -> Result<(AttackOutcome, Vec<Vec<f32>>)> {
    budget.validate()?;
    check_inputs(oracle, x, y)?;
    if budget.norm != Norm::Linf {
        return Err(Error::InvalidArgument("square attack is implemented for Linf only".into()));
    }
    let n = x.batch();
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let eps = budget.epsilon;
    if eps == 0.0 {
        let (losses, logits) = eval_loss(oracle, x, y, LossKind::Margin)?;
        let pred = logits.argmax_rows();
        let success = pred.iter().zip(y).map(|(p, l)| p != l).collect();
        let trace = losses.iter().map(|&l| vec![l]).collect();
        return Ok((AttackOutcome { adv_inputs: x.clone(), success, queries: vec![1; n], best_loss: losses }, trace));
    }
    let mut rngs: Vec<_> = ids.iter().map(|&id| rng_for(budget.seed, &[stream::SQUARE, id])).collect();
    // vertical-stripe initialization
    let mut cur = x.clone();
    for i in 0..n {
        let row = cur.row_mut(i);
        for ch in 0..c {
            for col in 0..w {
                let s = if rngs[i].random_bool(0.5) { eps } else { -eps };
                for r in 0..h {
                    let j = (ch * h + r) * w + col;
                    row[j] = (x.row(i)[j] + s).clamp(0.0, 1.0);
                }
            }
        }
    }
    let (mut best_loss, logits) = eval_loss(oracle, &cur, y, LossKind::Margin)?;
    let mut pred = logits.argmax_rows();
    let mut queries = vec![1usize; n];
    let mut trace: Vec<Vec<f32>> = best_loss.iter().map(|&l| vec![l]).collect();
    for it in 0..budget.steps {
        let active: Vec<usize> = (0..n).filter(|&i| pred[i] == y[i]).collect();
        if active.is_empty() {
            break;
        }
        let s = square_side(it, budget.steps, h.min(w));
        let mut cand = cur.select(&active)?;
        for (a, &i) in active.iter().enumerate() {
            let rng = &mut rngs[i];
            let r0 = rng.random_range(0..=h - s);
            let c0 = rng.random_range(0..=w - s);
            let row = cand.row_mut(a);
            for ch in 0..c {
                let sgn = if rng.random_bool(0.5) { eps } else { -eps };
                for r in r0..r0 + s {
                    for col in c0..c0 + s {
                        let j = (ch * h + r) * w + col;
                        row[j] = (x.row(i)[j] + sgn).clamp(0.0, 1.0);
                    }
                }
            }
        }
        let ya: Vec<usize> = active.iter().map(|&i| y[i]).collect();
        let (losses, logits) = eval_loss(oracle, &cand, &ya, LossKind::Margin)?;
        let preds = logits.argmax_rows();
        for (a, &i) in active.iter().enumerate() {
            queries[i] += 1;
            if losses[a] > best_loss[i] {
                best_loss[i] = losses[a];
                pred[i] = preds[a];
                cur.row_mut(i).copy_from_slice(cand.row(a));
                trace[i].push(losses[a]);
            }
        }
    }
    let success = pred.iter().zip(y).map(|(p, l)| p != l).collect();
    Ok((AttackOutcome { adv_inputs: cur, success, queries, best_loss }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn side_schedule_halves_at_fractions() {
        assert_eq!(square_side(0, 100, 28), 22);
        assert_eq!(square_side(5, 100, 28), 11);
        assert_eq!(square_side(10, 100, 28), 6);
        assert_eq!(square_side(20, 100, 28), 3);
        assert_eq!(square_side(50, 100, 28), 1);
        assert_eq!(square_side(99, 100, 28), 1);
    }
}
