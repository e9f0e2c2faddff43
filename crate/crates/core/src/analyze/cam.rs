//! Class activation maps: CAM, GradCAM and GradCAM++.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear, Dims};
use crate::nn::spec::param_name;
use crate::nn::{LayerKind, Model};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamVariant {
    Cam,
    GradCam,
    GradCamPlusPlus,
}

impl std::str::FromStr for CamVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(CamVariant::Cam),
            "gradcam" | "grad-cam" => Ok(CamVariant::GradCam),
            "gradcam++" | "grad-cam-plus-plus" => Ok(CamVariant::GradCamPlusPlus),
            other => Err(Error::InvalidArgument(format!("unknown CAM variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub variant: CamVariant,
    /// `h'×w'` heat at the layer's resolution, max-normalized to 1 when nonzero.
    pub heat: Tensor,
    /// Bilinear upsample of `heat` to the input's `H×W`, normalized the same way.
    pub upsampled: Tensor,
    /// Per-channel weights `α_k`.
    pub weights: Vec<f64>,
}

/// Small constant in the GradCAM++ denominator.
const PLUS_PLUS_EPS: f64 = 1e-7;

/// Heat map for class `target` from the activations of layer `layer`.
/// `x` is a single `C×H×W` sample (a leading batch axis of 1 is accepted).
pub fn gradcam(model: &Model, x: &Tensor, target: usize, layer: usize, variant: CamVariant) -> Result<CamMap> {
    let x = match x.ndim() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            x.clone().reshape(s)?
        }
        4 if x.batch() == 1 => x.clone(),
        _ => return Err(Error::Shape(format!("gradcam takes one sample, got {:?}", x.shape()))),
    };
    if target >= model.num_classes() {
        return Err(Error::LabelOutOfRange { label: target, classes: model.num_classes() });
    }
    let layers = &model.spec().layers;
    if layer >= layers.len() {
        return Err(Error::InvalidArgument(format!("model has no layer {layer}")));
    }
    let (logits, cache) = model.forward_eval(&x, true)?;
    let cache = cache.expect("retained");
    let act = cache.layer_output(layer).expect("layer exists");
    if act.ndim() != 4 {
        return Err(Error::InvalidArgument(format!("layer {layer} ({}) has no spatial activations", layers[layer].name())));
    }
    let (k, h, w) = (act.shape()[1], act.shape()[2], act.shape()[3]);
    let hw = h * w;
    let a: Vec<f64> = act.data().iter().map(|&v| v as f64).collect();
    let weights: Vec<f64> = match variant {
        CamVariant::Cam => cam_weights(model, layer, target, k)?,
        CamVariant::GradCam | CamVariant::GradCamPlusPlus => {
            let mut onehot = Tensor::zeros(logits.shape().to_vec());
            onehot.data_mut()[target] = 1.0;
            let (_, g) = model.backward_capture(&cache, &onehot, layer)?;
            let g: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
            (0..k)
                .map(|ch| {
                    let gs = &g[ch * hw..(ch + 1) * hw];
                    if variant == CamVariant::GradCam {
                        gs.iter().sum::<f64>() / hw as f64
                    } else {
                        let sum_a: f64 = a[ch * hw..(ch + 1) * hw].iter().sum();
                        gs.iter()
                            .map(|&gv| {
                                let (g2, g3) = (gv * gv, gv * gv * gv);
                                let alpha = if gv != 0.0 { g2 / (2.0 * g2 + sum_a * g3 + PLUS_PLUS_EPS) } else { 0.0 };
                                alpha * gv.max(0.0)
                            })
                            .sum()
                    }
                })
                .collect()
        }
    };
    let mut heat: Vec<f64> =
        (0..hw).map(|p| (0..k).map(|ch| weights[ch] * a[ch * hw + p]).sum::<f64>().max(0.0)).collect();
    let max = heat.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        heat.iter_mut().for_each(|v| *v /= max);
    }
    let heat_f: Vec<f32> = heat.iter().map(|&v| v as f32).collect();
    let (ih, iw) = (x.shape()[2], x.shape()[3]);
    let upsampled = upsample(&heat_f, h, w, ih, iw);
    Ok(CamMap { variant, heat: Tensor::new([h, w], heat_f)?, upsampled: Tensor::new([ih, iw], upsampled)?, weights })
}

/// Classifier row of a `GlobalAvgPool → [Flatten] → Linear` head that directly
/// follows `layer`.
fn cam_weights(model: &Model, layer: usize, target: usize, k: usize) -> Result<Vec<f64>> {
    let layers = &model.spec().layers;
    let rest: Vec<&LayerKind> = layers[layer + 1..].iter().filter(|l| !matches!(l, LayerKind::Flatten)).collect();
    match rest.as_slice() {
        [LayerKind::GlobalAvgPool, LayerKind::Linear { .. }] => {}
        _ => return Err(Error::InvalidArgument(format!("CAM needs a global-average-pool + linear head right after layer {layer}"))),
    }
    let lin = layers.len() - 1;
    let wt = &model.params()[&param_name(lin, "weight")];
    Ok(wt.data()[target * k..(target + 1) * k].iter().map(|&v| v as f64).collect())
}

fn upsample(heat: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let d = Dims { c: 1, h, w };
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let y = (r as f64 + 0.5) * sy - 0.5;
            let x = (c as f64 + 0.5) * sx - 0.5;
            out.push(bilinear(heat, d, y, x, 0.0, true).max(0.0));
        }
    }
    let max = out.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    out
}
