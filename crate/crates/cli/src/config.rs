//! Config files: documented defaults, user file and `key.path=value`
//! overrides merged into one TOML tree, then parsed strictly.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use robustkit::analyze::CamVariant;
use robustkit::data::bench::SuiteConfig;
use robustkit::data::bench::CorruptionSuite;
use robustkit::train::TrainMode;

use crate::error::{CliError, Result};

/// The six subcommands, with their annotated default files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    AttackEval,
    CorruptEval,
    Benchmark,
    Visualize,
    WiseFt,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Train, Command::AttackEval, Command::CorruptEval, Command::Benchmark, Command::Visualize, Command::WiseFt];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::AttackEval => "attack-eval",
            Command::CorruptEval => "corrupt-eval",
            Command::Benchmark => "benchmark",
            Command::Visualize => "visualize",
            Command::WiseFt => "wise-ft",
        }
    }

    pub fn defaults(self) -> &'static str {
        match self {
            Command::Train => include_str!("../configs/train.toml"),
            Command::AttackEval => include_str!("../configs/attack-eval.toml"),
            Command::CorruptEval => include_str!("../configs/corrupt-eval.toml"),
            Command::Benchmark => include_str!("../configs/benchmark.toml"),
            Command::Visualize => include_str!("../configs/visualize.toml"),
            Command::WiseFt => include_str!("../configs/wise-ft.toml"),
        }
    }

    /// Key that `--seed` sets, if the command is seeded.
    pub fn seed_key(self) -> Option<&'static str> {
        match self {
            Command::Train | Command::AttackEval | Command::Visualize => Some("seed"),
            Command::CorruptEval => Some("corruptions.seed"),
            Command::Benchmark => Some("suite.seed"),
            Command::WiseFt => None,
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies one `key.path=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key.path=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur.entry(seg.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override `{key}`: `{seg}` is not a table"))),
        };
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// `"a/b"` with numeric `a` and nonzero `b`, as a float.
fn fraction(s: &str) -> Option<f64> {
    let (a, b) = s.split_once('/')?;
    let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (b != 0.0 && a.is_finite() && b.is_finite()).then(|| a / b)
}

fn normalize(v: &mut Value) {
    match v {
        Value::String(s) => {
            if let Some(f) = fraction(s) {
                *v = Value::Float(f);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(normalize),
        Value::Table(t) => t.iter_mut().for_each(|(_, v)| normalize(v)),
        _ => {}
    }
}

/// Merged and fraction-normalized tree for `command`.
pub fn merged(command: Command, file: Option<&str>, overrides: &[String]) -> Result<Table> {
    let mut table = parse_table(command.defaults(), "built-in defaults")?;
    if let Some(text) = file {
        merge(&mut table, parse_table(text, "config file")?);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut v = Value::Table(table);
    normalize(&mut v);
    match v {
        Value::Table(t) => Ok(t),
        _ => unreachable!(),
    }
}

/// Strictly parses the merged tree into the command's schema. Re-parsing
/// the rendered text keeps toml's key-naming error messages.
/// Parses the merged config into the command's schema without running it.
pub fn validate(command: Command, file: Option<&str>, overrides: &[String]) -> Result<()> {
    match command {
        Command::Train => load::<TrainFile>(command, file, overrides).map(drop),
        Command::AttackEval => load::<AttackFile>(command, file, overrides).map(drop),
        Command::CorruptEval => load::<CorruptFile>(command, file, overrides).map(drop),
        Command::Benchmark => load::<BenchFile>(command, file, overrides).map(drop),
        Command::Visualize => load::<VisualizeFile>(command, file, overrides).map(drop),
        Command::WiseFt => load::<WiseFile>(command, file, overrides).map(drop),
    }
}

pub fn load<T: DeserializeOwned>(command: Command, file: Option<&str>, overrides: &[String]) -> Result<T> {
    let table = merged(command, file, overrides)?;
    let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}{}", command.name(), e.message(), locate(&e, &text))))
}

/// The offending line and its table, so type errors name their key.
fn locate(e: &toml::de::Error, text: &str) -> String {
    let Some(span) = e.span() else { return String::new() };
    let start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let end = text[span.start..].find('\n').map_or(text.len(), |i| span.start + i);
    let line = text[start..end].trim();
    match text[..start].lines().rev().find(|l| l.starts_with('[')) {
        Some(table) => format!(" (at `{table} {line}`)"),
        None => format!(" (at `{line}`)"),
    }
}

/// Snapshot of a resolved config as TOML.
pub fn snapshot<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Config(format!("cannot render resolved config: {e}")))
}

pub fn required<'a>(value: &'a Option<String>, key: &str) -> Result<&'a str> {
    value.as_deref().ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

// ---------------------------------------------------------------- schemas

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Shapes,
    ShapesV2,
    Idx,
    Container,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub channels: usize,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    DeskCnn,
    DeskCnnSwitchable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: String,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_smoothing: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_decay: Option<f32>,
    pub mode: TrainMode,
    pub epsilon: f32,
    pub inner_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_step_size: Option<f32>,
    pub warmup_epochs: f64,
    pub basic_aug: bool,
    pub augmix: bool,
    pub js_loss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apr_prob: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sam_rho: Option<f32>,
    pub evaluate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub seed: u64,
    pub data: DataSection,
    pub eval: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    ApgdCe,
    ApgdDlr,
    Square,
    Autoattack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub method: AttackMethod,
    pub epsilon: f32,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f32>,
    pub restarts: usize,
    pub random_start: bool,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFile {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub data: DataSection,
    pub attack: AttackSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub data: DataSection,
    pub corruptions: CorruptionSuite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub compare: Vec<String>,
    pub data: DataSection,
    pub suite: SuiteConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisKind {
    Boundary,
    Gradcam,
    Kernels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub epsilon: f32,
    pub span_factor: f32,
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcamSection {
    pub variant: CamVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualizeFile {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub kind: VisKind,
    pub samples: Vec<usize>,
    pub data: DataSection,
    pub boundary: BoundarySection,
    pub gradcam: GradcamSection,
    pub kernels: KernelsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetuned: Option<String>,
    pub alphas: Vec<f32>,
    pub evaluate: bool,
    pub data: DataSection,
}
