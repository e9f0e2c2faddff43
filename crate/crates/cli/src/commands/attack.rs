use serde_json::{json, Value};

use robustkit::attacks::{apgd, autoattack_with, fgsm, pgd, square_attack, AttackBudget, AutoAttackConfig, LossKind, Norm};

use super::{check_compatible, load_data, load_model, Output, RESOLVED_CONFIG};
use crate::config::{load, required, snapshot, AttackFile, AttackMethod, Command};
use crate::error::{Context, Result};

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let cfg: AttackFile = load(Command::AttackEval, file, overrides)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    let (model, hash) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    let data = load_data(&cfg.data, "data")?;
    check_compatible(&model, &data)?;
    let (x, y) = (data.images(), data.labels());
    let a = &cfg.attack;
    let eps = a.epsilon;
    let budget = |steps: usize, default_step: f32| AttackBudget {
        norm: Norm::Linf,
        epsilon: eps,
        steps,
        step_size: a.step_size.unwrap_or(default_step),
        restarts: a.restarts,
        seed: cfg.seed,
    };
    let what = || format!("running {:?}", a.method);
    let clean = model.predict(x).context(|| "clean predictions".into())?;
    let clean_correct: Vec<bool> = clean.iter().zip(y).map(|(p, l)| p == l).collect();
    let mut summaries = None;
    let (success, queries): (Vec<bool>, Vec<usize>) = match a.method {
        AttackMethod::Autoattack => {
            let c = AutoAttackConfig {
                epsilon: eps,
                apgd_steps: a.steps,
                apgd_restarts: a.restarts,
                square_queries: a.queries,
                seed: cfg.seed,
            };
            let (robust, report) = autoattack_with(&model, x, y, &c).context(what)?;
            summaries = Some(report.attacks);
            (robust.iter().map(|r| !r).collect(), report.samples.iter().map(|s| s.queries).collect())
        }
        method => {
            let outcome = match method {
                AttackMethod::Fgsm => fgsm(&model, x, y, &budget(1, eps)),
                AttackMethod::Pgd => pgd(&model, x, y, &budget(a.steps, eps / 4.0), a.random_start),
                AttackMethod::ApgdCe => apgd(&model, x, y, &budget(a.steps, 2.0 * eps), LossKind::CrossEntropy),
                AttackMethod::ApgdDlr => apgd(&model, x, y, &budget(a.steps, 2.0 * eps), LossKind::Dlr),
                AttackMethod::Square => square_attack(&model, x, y, &budget(a.queries, 1.0)),
                AttackMethod::Autoattack => unreachable!(),
            }
            .context(what)?;
            (outcome.success, outcome.queries)
        }
    };
    let robust: Vec<bool> = clean_correct.iter().zip(&success).map(|(&c, &s)| c && !s).collect();
    let n = y.len() as f64;
    let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64;
    let robust_acc = count(&robust) / n;
    eprintln!("clean accuracy {:.4}  robust accuracy {:.4}", count(&clean_correct) / n, robust_acc);
    let report = json!({
        "method": a.method,
        "epsilon": eps,
        "checkpoint_sha256": hash,
        "dataset": data.provenance.describe(),
        "samples": y.len(),
        "clean_accuracy": count(&clean_correct) / n,
        "robust_accuracy": robust_acc,
        "mean_queries": queries.iter().sum::<usize>() as f64 / n,
        "attacks": summaries,
        "robust": robust,
    });
    out.json("attack_report.json", &report)?;
    Ok(Value::Null)
}
