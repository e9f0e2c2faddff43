//! Auto-step-size PGD with momentum and restart-from-best.

use super::oracle::{eval_loss, Classifier, LossKind};
use super::{ascent_step, check_inputs, default_ids, finish, project, random_start, unchanged, AttackBudget, AttackOutcome};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

const MOMENTUM: f32 = 0.75;
const RHO: f64 = 0.75;

/// Iterations at which the step size is reconsidered: `ceil(p_j · steps)` with
/// `p_0 = 0`, `p_1 = 0.22`, `p_{j+1} = p_j + max(p_j − p_{j−1} − 0.03, 0.06)`.
pub fn apgd_checkpoints(steps: usize) -> Vec<usize> {
    let mut ps = vec![0.0f64, 0.22];
    loop {
        let j = ps.len() - 1;
        let next = ps[j] + (ps[j] - ps[j - 1] - 0.03).max(0.06);
        if next > 1.0 {
            break;
        }
        ps.push(next);
    }
    let mut out: Vec<usize> = ps.iter().map(|p| (p * steps as f64 - 1e-9).ceil().max(0.0) as usize).collect();
    out.dedup();
    out.retain(|&w| w < steps || w == 0);
    out
}

/// Per-sample step size used at every iteration.
#[derive(Clone, Debug, Default)]
pub struct ApgdTrace {
    pub step_sizes: Vec<Vec<f32>>,
    pub checkpoints: Vec<usize>,
}

pub fn apgd(model: &impl Classifier, x: &Tensor, y: &[usize], budget: &AttackBudget, loss: LossKind) -> Result<AttackOutcome> {
    Ok(apgd_ids(model, x, y, budget, loss, &default_ids(x.batch()))?.0)
}

pub fn apgd_traced(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    loss: LossKind,
) -> Result<(AttackOutcome, ApgdTrace)> {
    apgd_ids(model, x, y, budget, loss, &default_ids(x.batch()))
}

pub(crate) fn apgd_ids(
    model: &impl Classifier,
    x: &Tensor,
    y: &[usize],
    budget: &AttackBudget,
    loss: LossKind,
    ids: &[u64],
) -> Result<(AttackOutcome, ApgdTrace)> {
    budget.validate()?;
    check_inputs(model, x, y)?;
    if budget.steps < 2 {
        return Err(Error::InvalidArgument("apgd needs at least two steps".into()));
    }
    if loss == LossKind::Dlr && model.num_classes() < 3 {
        return Err(Error::InvalidArgument(format!("DLR loss needs at least 3 classes, got {}", model.num_classes())));
    }
    if loss == LossKind::Margin {
        return Err(Error::InvalidArgument("apgd needs a differentiable loss".into()));
    }
    let n = x.batch();
    let checkpoints = apgd_checkpoints(budget.steps);
    let mut trace = ApgdTrace { step_sizes: vec![Vec::new(); n], checkpoints: checkpoints.clone() };
    if budget.epsilon == 0.0 {
        return Ok((unchanged(model, x, y, loss)?, trace));
    }
    let d = x.row_len();
    let eps = budget.epsilon;
    let mut queries = vec![0usize; n];
    let mut overall_best = x.clone();
    let mut overall_loss = vec![f32::NEG_INFINITY; n];
    for restart in 0..budget.restarts.max(1) {
        let mut cur = x.clone();
        for i in 0..n {
            let mut rng = rng_for(budget.seed, &[stream::ATTACK, ids[i], 1000 + restart as u64]);
            cur.row_mut(i).copy_from_slice(&random_start(x.row(i), budget.norm, eps, &mut rng));
        }
        let mut prev = cur.clone();
        let mut eta = vec![2.0 * eps; n];
        let (mut f_prev, _, mut g) = model.loss_and_input_grad(&cur, y, loss)?;
        g.ensure_finite("attack gradient")?;
        let mut best = cur.clone();
        let mut best_grad = g.clone();
        let mut f_best = f_prev.clone();
        let mut f_best_at_check = f_best.clone();
        let mut reduced_at_check = vec![false; n];
        let mut increases = vec![0usize; n];
        let mut next_check = 1;
        for q in queries.iter_mut() {
            *q += 1;
        }
        for k in 0..budget.steps {
            // x_{k+1} from x_k (cur) and x_{k-1} (prev)
            let mut next = cur.clone();
            for i in 0..n {
                trace.step_sizes[i].push(eta[i]);
                let row = &mut next.data_mut()[i * d..(i + 1) * d];
                ascent_step(row, &g.data()[i * d..(i + 1) * d], budget.norm, eta[i]);
                project(row, x.row(i), budget.norm, eps);
                if k > 0 {
                    let (c, p) = (cur.row(i), prev.row(i));
                    for j in 0..d {
                        row[j] = c[j] + MOMENTUM * (row[j] - c[j]) + (1.0 - MOMENTUM) * (c[j] - p[j]);
                    }
                    project(row, x.row(i), budget.norm, eps);
                }
            }
            prev = cur;
            cur = next;
            let last = k + 1 == budget.steps;
            let (f_cur, g_cur) = if last {
                (eval_loss(model, &cur, y, loss)?.0, None)
            } else {
                let (f, _, g) = model.loss_and_input_grad(&cur, y, loss)?;
                g.ensure_finite("attack gradient")?;
                (f, Some(g))
            };
            for i in 0..n {
                queries[i] += 1;
                if f_cur[i] > f_prev[i] {
                    increases[i] += 1;
                }
                if f_cur[i] > f_best[i] {
                    f_best[i] = f_cur[i];
                    best.row_mut(i).copy_from_slice(cur.row(i));
                    if let Some(gc) = &g_cur {
                        best_grad.row_mut(i).copy_from_slice(gc.row(i));
                    }
                }
            }
            f_prev = f_cur;
            let Some(gc) = g_cur else { break };
            g = gc;
            let iter = k + 1;
            if next_check < checkpoints.len() && iter == checkpoints[next_check] {
                let interval = (checkpoints[next_check] - checkpoints[next_check - 1]) as f64;
                for i in 0..n {
                    let oscillating = (increases[i] as f64) < RHO * interval;
                    let stalled = !reduced_at_check[i] && f_best[i] <= f_best_at_check[i];
                    let reduce = oscillating || stalled;
                    reduced_at_check[i] = reduce;
                    f_best_at_check[i] = f_best[i];
                    increases[i] = 0;
                    if reduce {
                        eta[i] /= 2.0;
                        cur.row_mut(i).copy_from_slice(best.row(i));
                        prev.row_mut(i).copy_from_slice(best.row(i));
                        g.row_mut(i).copy_from_slice(best_grad.row(i));
                        f_prev[i] = f_best[i];
                    }
                }
                next_check += 1;
            }
        }
        for i in 0..n {
            if f_best[i] > overall_loss[i] {
                overall_loss[i] = f_best[i];
                overall_best.row_mut(i).copy_from_slice(best.row(i));
            }
        }
    }
    Ok((finish(model, overall_best, y, queries, overall_loss)?, trace))
}
