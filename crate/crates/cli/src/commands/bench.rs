use std::path::Path;

use serde_json::Value;

use robustkit::data::bench::{leaderboard, leaderboard_table, parse_reports, run_benchmark, BenchContext};

use super::corrupt::read_grid;
use super::{check_compatible, load_data, load_model, read_file, Output, RESOLVED_CONFIG};
use crate::config::{load, required, snapshot, BenchFile, Command};
use crate::error::{Context, Result};

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let cfg: BenchFile = load(Command::Benchmark, file, overrides)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let (model, _) = load_model(path)?;
    let name = cfg.name.clone().unwrap_or_else(|| {
        Path::new(path).file_stem().map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
    });
    let baseline = cfg.baseline.as_deref().map(read_grid).transpose()?;
    let reference = cfg.reference.as_deref().map(load_model).transpose()?.map(|(m, _)| m);
    let mut others = Vec::new();
    for p in &cfg.compare {
        let text = String::from_utf8_lossy(&read_file(p)?).into_owned();
        others.extend(parse_reports(&text).context(|| format!("parsing report {p}"))?);
    }
    let data = load_data(&cfg.data, "data")?;
    check_compatible(&model, &data)?;
    let ctx = BenchContext { baseline: baseline.as_ref(), reference: reference.as_ref() };
    let report = run_benchmark(&model, &name, &data, &cfg.suite, &ctx).context(|| "running the benchmark".into())?;
    out.write("report.jsonl", report.to_jsonl().as_bytes())?;
    let table = report.to_table();
    out.write("report.txt", table.as_bytes())?;
    eprint!("{table}");
    if !cfg.compare.is_empty() {
        others.push(report.clone());
        out.write("leaderboard.txt", leaderboard_table(&leaderboard(&others)).as_bytes())?;
    }
    if !report.complete {
        eprintln!("warning: report is incomplete ({} failed benchmark(s))", report.failures.len());
    }
    Ok(Value::Null)
}
