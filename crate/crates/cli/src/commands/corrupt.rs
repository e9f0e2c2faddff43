use serde_json::Value;

use robustkit::corruptions::{corruption_suite_eval_with, mce, ErrorGrid};

use super::{check_compatible, load_data, load_model, read_file, Output, RESOLVED_CONFIG};
use crate::config::{load, required, snapshot, Command, CorruptFile};
use crate::error::{CliError, Context, Result};

/// Reads an error grid written by an earlier `corrupt-eval` run.
pub fn read_grid(path: &str) -> Result<ErrorGrid> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::Core { context: format!("parsing error grid {path}"), source: e.into() })
}

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let cfg: CorruptFile = load(Command::CorruptEval, file, overrides)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    let (model, _) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    let baseline = cfg.baseline.as_deref().map(read_grid).transpose()?;
    let data = load_data(&cfg.data, "data")?;
    check_compatible(&model, &data)?;
    let c = &cfg.corruptions;
    let grid = corruption_suite_eval_with(&model, data.images(), data.labels(), c.seed, &c.kinds, &c.severities)
        .context(|| "evaluating the corruption suite".into())?;
    out.json("error_grid.json", &grid)?;
    if let Some(base) = baseline {
        let report = mce(&grid, &base).context(|| "computing mCE against the baseline".into())?;
        let mut table = format!("{:<16} {:>8}\n", "corruption", "CE");
        for r in &report.rows {
            table.push_str(&format!("{:<16} {:>8.2}\n", r.kind, r.ce));
        }
        table.push_str(&format!("{:<16} {:>8.2}\n", "mCE", report.mce));
        eprint!("{table}");
        out.json("mce_report.json", &report)?;
        out.write("mce.txt", table.as_bytes())?;
    }
    Ok(Value::Null)
}
