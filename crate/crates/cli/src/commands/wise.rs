use serde_json::{json, Value};

use robustkit::nn::{checkpoint_hash, save_checkpoint};
use robustkit::train::{evaluate_clean, wise_ft};

use super::{check_compatible, load_data, load_model, Output, RESOLVED_CONFIG};
use crate::config::{load, required, snapshot, Command, WiseFile};
use crate::error::{CliError, Context, Result};

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let cfg: WiseFile = load(Command::WiseFt, file, overrides)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    if cfg.alphas.is_empty() {
        return Err(CliError::Config("`alphas` must list at least one value".into()));
    }
    let (orig, _) = load_model(required(&cfg.original, "original")?)?;
    let (ft, _) = load_model(required(&cfg.finetuned, "finetuned")?)?;
    let data = if cfg.evaluate {
        let d = load_data(&cfg.data, "data")?;
        check_compatible(&orig, &d)?;
        Some(d)
    } else {
        None
    };
    let mixed = wise_ft(&orig, &ft, &cfg.alphas).context(|| "interpolating weights".into())?;
    let mut rows = Vec::new();
    for (alpha, model) in &mixed {
        let bytes = save_checkpoint(model);
        out.write(&format!("wise_{alpha}.rbk"), &bytes)?;
        let mut row = json!({ "alpha": alpha, "checkpoint_sha256": checkpoint_hash(&bytes) });
        if let Some(d) = &data {
            let (acc, loss) = evaluate_clean(model, d).context(|| format!("evaluating alpha {alpha}"))?;
            eprintln!("alpha {alpha}: accuracy {acc:.4}");
            row["accuracy"] = json!(acc);
            row["loss"] = json!(loss);
        }
        rows.push(row);
    }
    out.json("wise_ft.json", &json!({ "models": rows }))?;
    Ok(Value::Null)
}
