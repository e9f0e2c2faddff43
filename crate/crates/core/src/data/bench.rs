//! Benchmark suites and their reports.
//!
//! A report is one in-memory value emitted two ways: line-delimited JSON
//! records (header, one record per metric row, footer) that parse back to the
//! same value, and an aligned text table for reading. Tables are never parsed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ood_variants, Dataset, OodVariant};
use crate::attacks::{robust_accuracy_sweep, AutoAttackConfig};
use crate::corruptions::{corruption_suite_eval_with, mce, CorruptionKind, ErrorGrid};
use crate::error::{Error, Result};
use crate::nn::{checkpoint_hash, save_checkpoint, Model};
use crate::train::evaluate_clean;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSuite {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub seed: u64,
}

impl Default for CorruptionSuite {
    fn default() -> Self {
        CorruptionSuite { kinds: CorruptionKind::ALL.to_vec(), severities: vec![1, 2, 3, 4, 5], seed: 0 }
    }
}

/// Which benchmarks to run and on how many test samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub clean: bool,
    /// Radii for worst-case ensemble robust accuracy.
    #[serde(default)]
    pub robust_epsilons: Vec<f32>,
    #[serde(default = "default_apgd_steps")]
    pub apgd_steps: usize,
    #[serde(default = "default_square_queries")]
    pub square_queries: usize,
    #[serde(default)]
    pub corruptions: Option<CorruptionSuite>,
    #[serde(default)]
    pub ood: Vec<OodVariant>,
    /// Cap on the test samples used by the attack benchmark (the slowest one).
    #[serde(default)]
    pub robust_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_apgd_steps() -> usize {
    100
}

fn default_square_queries() -> usize {
    1000
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            clean: true,
            robust_epsilons: vec![],
            apgd_steps: default_apgd_steps(),
            square_queries: default_square_queries(),
            corruptions: None,
            ood: vec![],
            robust_samples: None,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn is_empty(&self) -> bool {
        !self.clean && self.robust_epsilons.is_empty() && self.corruptions.is_none() && self.ood.is_empty()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("suite config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    /// Top-1 accuracy, percent.
    CleanAccuracy,
    /// Accuracy under the worst-case attack ensemble, percent.
    RobustAccuracy { epsilon: f32 },
    /// Top-1 accuracy on a shifted dataset, percent.
    OodAccuracy { variant: OodVariant },
    /// Mean corruption error relative to the baseline grid (100 = baseline).
    Mce,
    /// Corruption error of one kind relative to the baseline grid.
    CorruptionError { kind: CorruptionKind },
}

impl Metric {
    pub fn label(&self) -> String {
        match self {
            Metric::CleanAccuracy => "clean".into(),
            Metric::RobustAccuracy { epsilon } => format!("robust@{epsilon}"),
            Metric::OodAccuracy { variant } => format!("ood/{}", variant.name()),
            Metric::Mce => "mCE".into(),
            Metric::CorruptionError { kind } => format!("ce/{}", kind.name()),
        }
    }

    /// Accuracies are percentages; error ratios are unbounded above.
    pub fn is_percentage(&self) -> bool {
        !matches!(self, Metric::Mce | Metric::CorruptionError { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(flatten)]
    pub metric: Metric,
    pub value: f64,
    /// Provenance of the data the value was measured on.
    pub dataset: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub checkpoint_hash: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub rows: Vec<MetricRow>,
    /// False when at least one benchmark failed; see `failures`.
    pub complete: bool,
    pub failures: Vec<String>,
}

/// Optional inputs some benchmarks need.
#[derive(Default)]
pub struct BenchContext<'a> {
    /// Baseline error grid anchoring mCE.
    pub baseline: Option<&'a ErrorGrid>,
    /// Reference model for the hard-mined variant.
    pub reference: Option<&'a Model>,
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

/// Runs every benchmark of `suite` on `data`. A failing benchmark is recorded
/// in `failures` and the report is marked incomplete; the others still run.
pub fn run_benchmark(model: &Model, name: &str, data: &Dataset, suite: &SuiteConfig, ctx: &BenchContext) -> Result<BenchmarkReport> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("benchmark suite lists no benchmark".into()));
    }
    let mut report = BenchmarkReport {
        model: name.to_string(),
        checkpoint_hash: checkpoint_hash(&save_checkpoint(model)),
        config_hash: suite.hash(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        rows: vec![],
        complete: true,
        failures: vec![],
    };
    let source = data.provenance.describe();
    let record = |report: &mut BenchmarkReport, what: &str, r: Result<Vec<MetricRow>>| match r {
        Ok(rows) => report.rows.extend(rows),
        Err(e) => {
            report.complete = false;
            report.failures.push(format!("{what}: {e}"));
        }
    };
    if suite.clean {
        let r = evaluate_clean(model, data)
            .map(|(acc, _)| vec![MetricRow { metric: Metric::CleanAccuracy, value: pct(acc), dataset: source.clone(), samples: data.len() }]);
        record(&mut report, "clean", r);
    }
    if !suite.robust_epsilons.is_empty() {
        let r = (|| {
            let sub = match suite.robust_samples {
                Some(k) => data.head(k)?,
                None => data.clone(),
            };
            let mut eps = suite.robust_epsilons.clone();
            eps.sort_by(f32::total_cmp);
            eps.dedup();
            let cfg = AutoAttackConfig {
                apgd_steps: suite.apgd_steps,
                square_queries: suite.square_queries,
                seed: suite.seed,
                ..AutoAttackConfig::new(eps[0])
            };
            let accs = robust_accuracy_sweep(model, sub.images(), sub.labels(), &eps, &cfg)?;
            Ok(eps
                .iter()
                .zip(accs)
                .map(|(&epsilon, a)| MetricRow {
                    metric: Metric::RobustAccuracy { epsilon },
                    value: pct(a),
                    dataset: source.clone(),
                    samples: sub.len(),
                })
                .collect())
        })();
        record(&mut report, "robust", r);
    }
    if let Some(cs) = &suite.corruptions {
        let r = (|| {
            let baseline = ctx.baseline.ok_or_else(|| Error::InvalidArgument("corruption benchmark needs a baseline error grid".into()))?;
            let grid = corruption_suite_eval_with(model, data.images(), data.labels(), cs.seed, &cs.kinds, &cs.severities)?;
            // a baseline may cover more kinds than the suite evaluates
            let mut base = baseline.clone();
            base.errors.retain(|k, _| grid.errors.contains_key(k));
            let rep = mce(&grid, &base)?;
            let mut rows = vec![MetricRow { metric: Metric::Mce, value: rep.mce, dataset: source.clone(), samples: data.len() }];
            // suite order rather than the grid's alphabetical order
            for &kind in &cs.kinds {
                let Some(row) = rep.rows.iter().find(|r| r.kind == kind.name()) else { continue };
                rows.push(MetricRow {
                    metric: Metric::CorruptionError { kind },
                    value: row.ce,
                    dataset: source.clone(),
                    samples: data.len(),
                });
            }
            Ok(rows)
        })();
        record(&mut report, "corruptions", r);
    }
    for &variant in &suite.ood {
        let r = (|| {
            let shifted = ood_variants(data, variant, ctx.reference, suite.seed)?;
            let (acc, _) = evaluate_clean(model, &shifted)?;
            Ok(vec![MetricRow {
                metric: Metric::OodAccuracy { variant },
                value: pct(acc),
                dataset: shifted.provenance.describe(),
                samples: shifted.len(),
            }])
        })();
        record(&mut report, variant.name(), r);
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Header { model: String, checkpoint_hash: String, config_hash: String, toolkit_version: String },
    Row(MetricRow),
    Footer { complete: bool, failures: Vec<String>, rows: usize },
}

impl BenchmarkReport {
    pub fn value(&self, metric: &Metric) -> Option<f64> {
        self.rows.iter().find(|r| &r.metric == metric).map(|r| r.value)
    }

    /// Line-delimited JSON: header, rows, footer; each line ends with `\n`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |l: &Line| {
            out.push_str(&serde_json::to_string(l).expect("report line serializes"));
            out.push('\n');
        };
        push(&Line::Header {
            model: self.model.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            config_hash: self.config_hash.clone(),
            toolkit_version: self.toolkit_version.clone(),
        });
        for r in &self.rows {
            push(&Line::Row(r.clone()));
        }
        push(&Line::Footer { complete: self.complete, failures: self.failures.clone(), rows: self.rows.len() });
        out
    }

    /// Parses a single report emitted by [`BenchmarkReport::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<BenchmarkReport> {
        let mut reports = parse_reports(text)?;
        if reports.len() != 1 {
            return Err(Error::InvalidArgument(format!("expected one report, found {}", reports.len())));
        }
        Ok(reports.remove(0))
    }

    /// Aligned, human-readable table of the rows.
    pub fn to_table(&self) -> String {
        let mut out = format!("model {}  checkpoint {}  version {}\n", self.model, short(&self.checkpoint_hash), self.toolkit_version);
        let labels: Vec<String> = self.rows.iter().map(|r| r.metric.label()).collect();
        let w = labels.iter().map(|l| l.len()).max().unwrap_or(0).max("metric".len());
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>7}  dataset", "metric", "value", "samples");
        for (r, l) in self.rows.iter().zip(&labels) {
            let _ = writeln!(out, "{:<w$}  {:>8.2}  {:>7}  {}", l, r.value, r.samples, r.dataset);
        }
        if !self.complete {
            for f in &self.failures {
                let _ = writeln!(out, "INCOMPLETE: {f}");
            }
        }
        out
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

/// Parses a stream of concatenated reports (e.g. one file per leaderboard).
pub fn parse_reports(text: &str) -> Result<Vec<BenchmarkReport>> {
    let mut out = Vec::new();
    let mut cur: Option<BenchmarkReport> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: Line = serde_json::from_str(line)?;
        match (parsed, cur.as_mut()) {
            (Line::Header { model, checkpoint_hash, config_hash, toolkit_version }, None) => {
                cur = Some(BenchmarkReport {
                    model,
                    checkpoint_hash,
                    config_hash,
                    toolkit_version,
                    rows: vec![],
                    complete: true,
                    failures: vec![],
                });
            }
            (Line::Row(row), Some(r)) => r.rows.push(row),
            (Line::Footer { complete, failures, rows }, Some(r)) => {
                if rows != r.rows.len() {
                    return Err(Error::InvalidArgument(format!("line {}: footer counts {rows} rows, found {}", i + 1, r.rows.len())));
                }
                r.complete = complete;
                r.failures = failures;
                out.push(cur.take().expect("open report"));
            }
            _ => return Err(Error::InvalidArgument(format!("line {}: record out of order", i + 1))),
        }
    }
    if cur.is_some() {
        return Err(Error::InvalidArgument("report stream ends without a footer".into()));
    }
    Ok(out)
}

/// One line of a multi-model comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub model: String,
    pub mce: Option<f64>,
    pub clean: Option<f64>,
    /// Robust accuracy at the smallest attacked radius.
    pub robust: Option<f64>,
    /// Mean accuracy over the OOD variants present.
    pub ood_mean: Option<f64>,
}

/// Entries sorted by ascending mCE; reports without an mCE row come last.
/// Ties keep the input order.
pub fn leaderboard(reports: &[BenchmarkReport]) -> Vec<LeaderboardEntry> {
    let mut entries: Vec<LeaderboardEntry> = reports
        .iter()
        .map(|r| {
            let ood: Vec<f64> = r.rows.iter().filter(|x| matches!(x.metric, Metric::OodAccuracy { .. })).map(|x| x.value).collect();
            LeaderboardEntry {
                model: r.model.clone(),
                mce: r.value(&Metric::Mce),
                clean: r.value(&Metric::CleanAccuracy),
                robust: r.rows.iter().find(|x| matches!(x.metric, Metric::RobustAccuracy { .. })).map(|x| x.value),
                ood_mean: (!ood.is_empty()).then(|| ood.iter().sum::<f64>() / ood.len() as f64),
            }
        })
        .collect();
    entries.sort_by(|a, b| match (a.mce, b.mce) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    entries
}

pub fn leaderboard_table(entries: &[LeaderboardEntry]) -> String {
    let w = entries.iter().map(|e| e.model.len()).max().unwrap_or(0).max("model".len());
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let mut out = format!("{:>4}  {:<w$}  {:>8}  {:>8}  {:>8}  {:>8}\n", "rank", "model", "mCE", "clean", "robust", "ood");
    for (i, e) in entries.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:<w$}  {:>8}  {:>8}  {:>8}  {:>8}",
            i + 1,
            e.model,
            cell(e.mce),
            cell(e.clean),
            cell(e.robust),
            cell(e.ood_mean)
        );
    }
    out
}
