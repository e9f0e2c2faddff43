//! Declarative model description and shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Conv2d { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Linear { out_features: usize },
    Relu,
    /// SiLU-style smooth activation `x * sigmoid(x)`.
    SmoothActivation,
    MaxPool { kernel: usize },
    AvgPool { kernel: usize },
    /// Binomial low-pass filter followed by strided subsampling.
    BlurPool { stride: usize, kernel: usize },
    /// Haar wavelet pooling keeping the low-low subband.
    DwtPool,
    BatchNorm,
    /// Batch norm with independent main/auxiliary statistics and shared affine parameters.
    SwitchableBatchNorm,
    PermutedAdaIn { p_swap: f32 },
    CrossNorm { p_swap: f32 },
    Flatten,
    GlobalAvgPool,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Relu => "relu",
            LayerKind::SmoothActivation => "smooth_activation",
            LayerKind::MaxPool { .. } => "max_pool",
            LayerKind::AvgPool { .. } => "avg_pool",
            LayerKind::BlurPool { .. } => "blur_pool",
            LayerKind::DwtPool => "dwt_pool",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::SwitchableBatchNorm => "switchable_batch_norm",
            LayerKind::PermutedAdaIn { .. } => "permuted_ada_in",
            LayerKind::CrossNorm { .. } => "cross_norm",
            LayerKind::Flatten => "flatten",
            LayerKind::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn is_batch_norm(&self) -> bool {
        matches!(self, LayerKind::BatchNorm | LayerKind::SwitchableBatchNorm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerKind>,
}

/// One trainable tensor or running statistic owned by a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn param_name(layer: usize, field: &str) -> String {
    format!("{layer}.{field}")
}

impl ModelSpec {
    /// Per-sample activation shapes: entry 0 is the input, entry `i + 1` the output of layer `i`.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Spec { index: 0, reason: "input shape has a zero dimension".into() });
        }
        if self.num_classes == 0 {
            return Err(Error::Spec { index: 0, reason: "num_classes must be positive".into() });
        }
        let mut shapes = vec![self.input_shape.to_vec()];
        for (index, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = layer_output_shape(layer, cur)
                .map_err(|reason| Error::Spec { index, reason })?;
            shapes.push(next);
        }
        let last = shapes.last().unwrap();
        if last.as_slice() != [self.num_classes] {
            return Err(Error::Spec {
                index: self.layers.len().saturating_sub(1),
                reason: format!(
                    "final output {last:?} does not match {} class logits",
                    self.num_classes
                ),
            });
        }
        Ok(shapes)
    }

    /// Trainable parameters, in layer order.
    pub fn param_decls(&self) -> Result<Vec<ParamDecl>> {
        let shapes = self.infer_shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let inp = &shapes[i];
            match layer {
                LayerKind::Conv2d { out_channels, kernel, .. } => {
                    out.push(ParamDecl {
                        name: param_name(i, "weight"),
                        shape: vec![*out_channels, inp[0], *kernel, *kernel],
                    });
                    out.push(ParamDecl { name: param_name(i, "bias"), shape: vec![*out_channels] });
                }
                LayerKind::Linear { out_features } => {
                    out.push(ParamDecl {
                        name: param_name(i, "weight"),
                        shape: vec![*out_features, inp[0]],
                    });
                    out.push(ParamDecl { name: param_name(i, "bias"), shape: vec![*out_features] });
                }
                LayerKind::BatchNorm | LayerKind::SwitchableBatchNorm => {
                    out.push(ParamDecl { name: param_name(i, "gamma"), shape: vec![inp[0]] });
                    out.push(ParamDecl { name: param_name(i, "beta"), shape: vec![inp[0]] });
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Running statistics, in layer order.
    pub fn state_decls(&self) -> Result<Vec<ParamDecl>> {
        let shapes = self.infer_shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let c = shapes[i][0];
            let fields: &[&str] = match layer {
                LayerKind::BatchNorm => &["running_mean", "running_var"],
                LayerKind::SwitchableBatchNorm => {
                    &["running_mean", "running_var", "aux_running_mean", "aux_running_var"]
                }
                _ => &[],
            };
            for f in fields {
                out.push(ParamDecl { name: param_name(i, f), shape: vec![c] });
            }
        }
        Ok(out)
    }

    /// The small desk CNN: two 3×3 conv/ReLU/max-pool stages and a linear head.
    pub fn desk_cnn(input_shape: [usize; 3], num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape,
            num_classes,
            layers: vec![
                LayerKind::Conv2d { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerKind::Relu,
                LayerKind::MaxPool { kernel: 2 },
                LayerKind::Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                LayerKind::Relu,
                LayerKind::MaxPool { kernel: 2 },
                LayerKind::Flatten,
                LayerKind::Linear { out_features: num_classes },
            ],
        }
    }

    /// Desk CNN with switchable batch norm after each convolution, for dual-branch training.
    pub fn desk_cnn_switchable(input_shape: [usize; 3], num_classes: usize) -> ModelSpec {
        let mut spec = ModelSpec::desk_cnn(input_shape, num_classes);
        spec.layers.insert(4, LayerKind::SwitchableBatchNorm);
        spec.layers.insert(1, LayerKind::SwitchableBatchNorm);
        spec
    }

    pub fn has_switchable_bn(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerKind::SwitchableBatchNorm))
    }
}

fn spatial(shape: &[usize], what: &str) -> std::result::Result<(usize, usize, usize), String> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(format!("{what} needs a (C, H, W) input, got {shape:?}")),
    }
}

fn layer_output_shape(layer: &LayerKind, inp: &[usize]) -> std::result::Result<Vec<usize>, String> {
    match *layer {
        LayerKind::Conv2d { out_channels, kernel, stride, padding } => {
            let (_, h, w) = spatial(inp, "conv2d")?;
            if out_channels == 0 || kernel == 0 || stride == 0 {
                return Err("conv2d needs positive out_channels, kernel and stride".into());
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(format!("conv2d kernel {kernel} larger than padded input {inp:?}"));
            }
            Ok(vec![
                out_channels,
                (h + 2 * padding - kernel) / stride + 1,
                (w + 2 * padding - kernel) / stride + 1,
            ])
        }
        LayerKind::Linear { out_features } => {
            if inp.len() != 1 {
                return Err(format!("linear needs a flat input, got {inp:?}"));
            }
            if out_features == 0 {
                return Err("linear needs positive out_features".into());
            }
            Ok(vec![out_features])
        }
        LayerKind::Relu | LayerKind::SmoothActivation => Ok(inp.to_vec()),
        LayerKind::MaxPool { kernel } | LayerKind::AvgPool { kernel } => {
            let (c, h, w) = spatial(inp, "pool")?;
            if kernel == 0 || h < kernel || w < kernel {
                return Err(format!("pool kernel {kernel} does not fit input {inp:?}"));
            }
            Ok(vec![c, h / kernel, w / kernel])
        }
        LayerKind::BlurPool { stride, kernel } => {
            let (c, h, w) = spatial(inp, "blur_pool")?;
            if stride == 0 || kernel == 0 {
                return Err("blur_pool needs positive stride and kernel".into());
            }
            Ok(vec![c, h.div_ceil(stride), w.div_ceil(stride)])
        }
        LayerKind::DwtPool => {
            let (c, h, w) = spatial(inp, "dwt_pool")?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(format!("dwt_pool needs even spatial dims, got {inp:?}"));
            }
            Ok(vec![c, h / 2, w / 2])
        }
        LayerKind::BatchNorm | LayerKind::SwitchableBatchNorm => {
            if inp.len() != 1 && inp.len() != 3 {
                return Err(format!("batch norm needs (C,H,W) or (F) input, got {inp:?}"));
            }
            Ok(inp.to_vec())
        }
        LayerKind::PermutedAdaIn { p_swap } | LayerKind::CrossNorm { p_swap } => {
            spatial(inp, "style normalization")?;
            if !(0.0..=1.0).contains(&p_swap) {
                return Err(format!("p_swap {p_swap} outside [0, 1]"));
            }
            Ok(inp.to_vec())
        }
        LayerKind::Flatten => Ok(vec![inp.iter().product()]),
        LayerKind::GlobalAvgPool => {
            let (c, _, _) = spatial(inp, "global_avg_pool")?;
            Ok(vec![c])
        }
    }
}
