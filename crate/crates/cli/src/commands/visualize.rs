use serde_json::{json, Value};

use robustkit::analyze::{boundary_map, gradcam, kernel_grid, render_ppm, PALETTE};
use robustkit::nn::Model;
use robustkit::rng::derive_seed;
use robustkit::Tensor;

use super::{check_compatible, load_data, load_model, Output, RESOLVED_CONFIG};
use crate::config::{load, required, snapshot, Command, VisKind, VisualizeFile};
use crate::error::{CliError, Context, Result};

/// Last layer whose output still has spatial extent.
fn last_spatial_layer(model: &Model) -> Option<usize> {
    let shapes = model.activation_shapes();
    (0..model.spec().layers.len()).rev().find(|&i| shapes[i + 1].len() == 3)
}

fn ppm(image: &Tensor, palette: bool) -> Result<Vec<u8>> {
    render_ppm(image, palette.then_some(&PALETTE[..])).context(|| "rendering PPM".into())
}

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let cfg: VisualizeFile = load(Command::Visualize, file, overrides)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    let (model, hash) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    if cfg.kind == VisKind::Kernels {
        let k = &cfg.kernels;
        let grid = kernel_grid(&model, k.layer, k.pca).context(|| format!("kernel grid of layer {}", k.layer))?;
        out.write("kernels.ppm", &ppm(&grid, false)?)?;
        return Ok(Value::Null);
    }
    let data = load_data(&cfg.data, "data")?;
    check_compatible(&model, &data)?;
    if cfg.samples.is_empty() {
        return Err(CliError::Config("`samples` must list at least one index".into()));
    }
    if let Some(&bad) = cfg.samples.iter().find(|&&i| i >= data.len()) {
        return Err(CliError::Config(format!("sample index {bad} is outside the {} loaded samples", data.len())));
    }
    let mut records = Vec::new();
    for &i in &cfg.samples {
        let x = data.images().select(&[i]).context(|| format!("selecting sample {i}"))?;
        let y = data.labels()[i];
        match cfg.kind {
            VisKind::Boundary => {
                let b = &cfg.boundary;
                let map = boundary_map(&model, &x, y, b.epsilon * b.span_factor, b.resolution, derive_seed(cfg.seed, &[i as u64]))
                    .context(|| format!("boundary map of sample {i}"))?;
                out.write(&format!("boundary_{i}.ppm"), &ppm(&map.to_tensor(), true)?)?;
                records.push(json!({
                    "sample": i,
                    "label": y,
                    "center_class": map.center_class,
                    "distinct_classes": map.distinct_classes(),
                    "min_misclass_radius": map.min_misclass_radius.is_finite().then_some(map.min_misclass_radius),
                    "fallback_direction": map.fallback_direction,
                }));
            }
            VisKind::Gradcam => {
                let g = &cfg.gradcam;
                let layer = match g.layer.or_else(|| last_spatial_layer(&model)) {
                    Some(l) => l,
                    None => return Err(CliError::Config("model has no layer with spatial output".into())),
                };
                let target = g.target.unwrap_or(y);
                let cam = gradcam(&model, &x, target, layer, g.variant).context(|| format!("class activation map of sample {i}"))?;
                let s = data.sample_shape();
                let img = x.reshape(vec![s[0], s[1], s[2]]).context(|| "reshaping the input".into())?;
                out.write(&format!("input_{i}.ppm"), &ppm(&img, false)?)?;
                out.write(&format!("gradcam_{i}.ppm"), &ppm(&cam.upsampled, false)?)?;
                records.push(json!({ "sample": i, "label": y, "target": target, "layer": layer, "weights": cam.weights }));
            }
            VisKind::Kernels => unreachable!(),
        }
    }
    let name = match cfg.kind {
        VisKind::Boundary => "boundary.json",
        _ => "gradcam.json",
    };
    out.json(name, &json!({ "checkpoint_sha256": hash, "samples": records }))?;
    Ok(Value::Null)
}
