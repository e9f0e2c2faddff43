//! Subcommand implementations and the artifact plumbing they share.

mod attack;
mod bench;
mod corrupt;
mod train;
mod visualize;
mod wise;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use robustkit::data::bench::TOOLKIT_VERSION;
use robustkit::data::{gen_shapes, load_dataset, load_idx_files, v2_split, Dataset, ShapesConfig};
use robustkit::nn::{checkpoint_hash, load_checkpoint, Model};

use crate::config::{Command, DataSection, DataSource};
use crate::error::{CliError, Context, Result};

pub use train::resolve_train;

/// Name of the resolved-config snapshot written before any work starts.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
/// Timestamps and wall times; the only non-deterministic artifact.
pub const METADATA: &str = "metadata.json";

/// Runs `command` with the merged config and writes its artifacts to `out`.
pub fn run(command: Command, file: Option<&str>, overrides: &[String], out: &Path) -> Result<()> {
    let started = unix_millis();
    let clock = Instant::now();
    let out = Output::create(out)?;
    let extra = match command {
        Command::Train => train::run(file, overrides, &out)?,
        Command::AttackEval => attack::run(file, overrides, &out)?,
        Command::CorruptEval => corrupt::run(file, overrides, &out)?,
        Command::Benchmark => bench::run(file, overrides, &out)?,
        Command::Visualize => visualize::run(file, overrides, &out)?,
        Command::WiseFt => wise::run(file, overrides, &out)?,
    };
    let meta = serde_json::json!({
        "command": command.name(),
        "toolkit_version": TOOLKIT_VERSION,
        "started_unix_ms": started,
        "finished_unix_ms": unix_millis(),
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "timing": extra,
    });
    out.json(METADATA, &meta)
}

fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Output directory handle.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })
    }

    /// Pretty JSON with a trailing newline.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

pub fn read_file(path: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io { path: PathBuf::from(path), source })
}

/// Loads a checkpoint and returns it with its SHA-256.
pub fn load_model(path: &str) -> Result<(Model, String)> {
    let bytes = read_file(path)?;
    let model = load_checkpoint(&bytes).context(|| format!("loading checkpoint {path}"))?;
    Ok((model, checkpoint_hash(&bytes)))
}

pub fn load_data(sec: &DataSection, key: &str) -> Result<Dataset> {
    let shapes = || ShapesConfig { n: sec.n, num_classes: sec.classes, size: sec.size, channels: sec.channels, ..Default::default() };
    let what = || format!("loading [{key}]");
    let ds = match sec.source {
        DataSource::Shapes => gen_shapes(&shapes(), sec.seed).context(what)?,
        DataSource::ShapesV2 => v2_split(&shapes(), sec.seed).context(what)?,
        DataSource::Idx => {
            let images = crate::config::required(&sec.images, &format!("{key}.images"))?;
            let labels = crate::config::required(&sec.labels, &format!("{key}.labels"))?;
            for p in [images, labels] {
                if !Path::new(p).exists() {
                    return Err(CliError::Io {
                        path: PathBuf::from(p),
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                    });
                }
            }
            load_idx_files(Path::new(images), Path::new(labels)).context(what)?
        }
        DataSource::Container => {
            let path = crate::config::required(&sec.path, &format!("{key}.path"))?;
            load_dataset(&read_file(path)?).context(what)?
        }
    };
    match sec.limit {
        Some(0) => Err(CliError::Config(format!("{key}.limit must be >= 1"))),
        Some(n) => ds.head(n).context(what),
        None => Ok(ds),
    }
}

/// The checkpoint's input shape must match the data.
pub fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    let want = model.spec().input_shape;
    if want != data.sample_shape() {
        return Err(CliError::Core {
            context: "checking data against the model".into(),
            source: robustkit::Error::Shape(format!("model expects {:?} inputs, data has {:?}", want, data.sample_shape())),
        });
    }
    if data.num_classes() > model.num_classes() {
        return Err(CliError::Core {
            context: "checking data against the model".into(),
            source: robustkit::Error::LabelOutOfRange { label: data.num_classes() - 1, classes: model.num_classes() },
        });
    }
    Ok(())
}
