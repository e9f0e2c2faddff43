use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{self, Command, VisKind};
use crate::error::{CliError, Result, EXIT_CONFIG};

const AFTER_HELP: &str = "\
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error, 5 I/O error.
Every run writes resolved_config.toml first and metadata.json (timestamps) last.";

#[derive(Debug, Parser)]
#[command(name = "robustkit", version, about = "Desk-scale robustness toolkit for image classifiers", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file merged over the built-in defaults.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epsilon=4/255`; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for artifacts.
    #[arg(short, long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Run seed (shorthand for the command's seed key).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Check the merged config, print it and exit without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Train a desk model (standard, adversarial or AdvProp).
    Train(Common),
    /// Measure robust accuracy under one attack or the AutoAttack ensemble.
    AttackEval(Common),
    /// Error grid over the corruption suite, with mCE against a baseline grid.
    CorruptEval(Common),
    /// Run a benchmark suite and write a report (JSONL and table).
    Benchmark(Common),
    /// Render decision-boundary maps, class activation maps or filter grids as PPM.
    Visualize {
        /// What to render; overrides the `kind` key.
        #[arg(value_enum)]
        kind: Option<KindArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Interpolate two checkpoints and evaluate the mixtures.
    WiseFt(Common),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum KindArg {
    Boundary,
    Gradcam,
    Kernels,
}

impl From<KindArg> for VisKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Boundary => VisKind::Boundary,
            KindArg::Gradcam => VisKind::Gradcam,
            KindArg::Kernels => VisKind::Kernels,
        }
    }
}

impl Sub {
    fn parts(&self) -> (Command, &Common) {
        match self {
            Sub::Train(c) => (Command::Train, c),
            Sub::AttackEval(c) => (Command::AttackEval, c),
            Sub::CorruptEval(c) => (Command::CorruptEval, c),
            Sub::Benchmark(c) => (Command::Benchmark, c),
            Sub::Visualize { common, .. } => (Command::Visualize, common),
            Sub::WiseFt(c) => (Command::WiseFt, c),
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let (command, common) = cli.command.parts();
    let file = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?),
        None => None,
    };
    let mut overrides = Vec::new();
    if let Some(seed) = common.seed {
        let key = command
            .seed_key()
            .ok_or_else(|| CliError::Config(format!("{} takes no seed", command.name())))?;
        overrides.push(format!("{key}={seed}"));
    }
    overrides.extend(common.overrides.iter().cloned());
    if let Sub::Visualize { kind: Some(k), .. } = &cli.command {
        let name = match VisKind::from(*k) {
            VisKind::Boundary => "boundary",
            VisKind::Gradcam => "gradcam",
            VisKind::Kernels => "kernels",
        };
        overrides.push(format!("kind=\"{name}\""));
    }
    if common.dry_run {
        config::validate(command, file.as_deref(), &overrides)?;
        let table = config::merged(command, file.as_deref(), &overrides)?;
        print!("{}", toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?);
        return Ok(());
    }
    commands::run(command, file.as_deref(), &overrides, &common.out)
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
