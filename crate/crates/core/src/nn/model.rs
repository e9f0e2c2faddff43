//! Parameterized differentiable model compiled from a [`ModelSpec`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, BnAux, ConvGeom, Real, StyleAux, BN_MOMENTUM};
use super::spec::{param_name, LayerKind, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnBranch {
    Main,
    Auxiliary,
}

pub type ParamMap = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    params: ParamMap,
    bn_state: ParamMap,
    mode: Mode,
    bn_branch: BnBranch,
    rng: ChaCha8Rng,
    update_running_stats: bool,
}

#[derive(Clone, Debug)]
pub(crate) enum LayerAux<F> {
    None,
    MaxIdx(Vec<u32>),
    Bn(BnAux<F>),
    Style(StyleAux<F>),
}

/// Layer inputs/outputs retained by a forward pass for backward and CAM extraction.
#[derive(Clone, Debug)]
pub struct ActivationCache {
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Tensor>,
    aux: Vec<LayerAux<f32>>,
}

impl ActivationCache {
    pub fn batch_size(&self) -> usize {
        self.acts[0].batch()
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }

    /// Output of layer `index`.
    pub fn layer_output(&self, index: usize) -> Option<&Tensor> {
        self.acts.get(index + 1)
    }

    pub fn logits(&self) -> &Tensor {
        self.acts.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: ParamMap,
    pub input: Tensor,
}

pub(crate) trait ParamStore<F> {
    fn slice(&self, name: &str) -> &[F];
}

impl ParamStore<f32> for ParamMap {
    fn slice(&self, name: &str) -> &[f32] {
        self.get(name).map(|t| t.data()).unwrap_or_else(|| panic!("missing parameter {name}"))
    }
}

impl ParamStore<f64> for BTreeMap<String, Vec<f64>> {
    fn slice(&self, name: &str) -> &[f64] {
        self.get(name).map(|v| v.as_slice()).unwrap_or_else(|| panic!("missing parameter {name}"))
    }
}

pub(crate) struct ForwardOutput<F> {
    pub logits: Vec<F>,
    pub acts: Vec<Vec<F>>,
    pub aux: Vec<LayerAux<F>>,
    pub stat_updates: Vec<(String, Vec<f32>)>,
}

/// Builds a model with Kaiming-uniform (fan-in) weights, unit BN scale and zero shift.
pub fn build_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    Model::build(spec, seed)
}

impl Model {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model> {
        let shapes = spec.infer_shapes()?;
        let mut params = ParamMap::new();
        let mut fan_in = 1usize;
        for decl in spec.param_decls()? {
            let layer: u64 = decl.name.split('.').next().unwrap().parse().unwrap();
            let field = decl.name.rsplit('.').next().unwrap();
            let numel: usize = decl.shape.iter().product();
            let data = match field {
                "gamma" => vec![1.0; numel],
                "beta" => vec![0.0; numel],
                "weight" => {
                    fan_in = decl.shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    let mut rng = rng_for(seed, &[stream::INIT, layer, 0]);
                    (0..numel).map(|_| rng.random_range(-bound..=bound)).collect()
                }
                "bias" => {
                    // weight of the same layer precedes its bias
                    let bound = (1.0 / fan_in as f64).sqrt() as f32;
                    let mut rng = rng_for(seed, &[stream::INIT, layer, 1]);
                    (0..numel).map(|_| rng.random_range(-bound..=bound)).collect()
                }
                other => unreachable!("unknown parameter field {other}"),
            };
            params.insert(decl.name, Tensor::new(decl.shape, data)?);
        }
        let mut bn_state = ParamMap::new();
        for decl in spec.state_decls()? {
            let fill = if decl.name.ends_with("var") { 1.0 } else { 0.0 };
            bn_state.insert(decl.name, Tensor::full(decl.shape, fill));
        }
        Ok(Model {
            spec,
            shapes,
            params,
            bn_state,
            mode: Mode::Train,
            bn_branch: BnBranch::Main,
            rng: rng_for(seed, &[stream::STOCHASTIC_LAYERS]),
            update_running_stats: true,
        })
    }

    /// Reassembles a model from stored parts, validating names and shapes.
    pub fn from_parts(spec: ModelSpec, params: ParamMap, bn_state: ParamMap) -> Result<Model> {
        let mut model = Model::build(spec, 0)?;
        for (store, incoming, what) in [
            (&mut model.params, params, "parameter"),
            (&mut model.bn_state, bn_state, "statistic"),
        ] {
            if store.len() != incoming.len() || store.keys().zip(incoming.keys()).any(|(a, b)| a != b) {
                return Err(Error::ParamMismatch(format!(
                    "{what} keys {:?} do not match spec keys {:?}",
                    incoming.keys().collect::<Vec<_>>(),
                    store.keys().collect::<Vec<_>>()
                )));
            }
            for (name, t) in incoming {
                if store[&name].shape() != t.shape() {
                    return Err(Error::ParamMismatch(format!(
                        "{what} `{name}` has shape {:?}, spec expects {:?}",
                        t.shape(),
                        store[&name].shape()
                    )));
                }
                store.insert(name, t);
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Per-sample activation shapes; entry `i + 1` is the output of layer `i`.
    pub fn activation_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn set_params(&mut self, params: ParamMap) -> Result<()> {
        check_same_layout(&self.params, &params, "parameter")?;
        self.params = params;
        Ok(())
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn bn_state(&self) -> &ParamMap {
        &self.bn_state
    }

    pub fn set_bn_state(&mut self, state: ParamMap) -> Result<()> {
        check_same_layout(&self.bn_state, &state, "statistic")?;
        self.bn_state = state;
        Ok(())
    }

    pub fn bn_state_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.bn_state.get_mut(name)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn bn_branch(&self) -> BnBranch {
        self.bn_branch
    }

    pub fn set_bn_branch(&mut self, branch: BnBranch) {
        self.bn_branch = branch;
    }

    /// Reseeds the stream driving Permuted-AdaIN / CrossNorm decisions.
    pub fn reseed_stochastic(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::STOCHASTIC_LAYERS]));
    }

    /// When false, train-mode forwards use batch statistics but leave running statistics untouched.
    pub fn set_update_running_stats(&mut self, on: bool) {
        self.update_running_stats = on;
    }

    /// Names of normalization scale/shift parameters (excluded from weight decay).
    pub fn norm_param_names(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| k.ends_with(".gamma") || k.ends_with(".beta"))
            .cloned()
            .collect()
    }

    /// Copies main-branch running statistics into the auxiliary branch.
    pub fn tie_bn_branches(&mut self) {
        let names: Vec<String> = self.bn_state.keys().filter(|k| k.contains(".aux_")).cloned().collect();
        for aux in names {
            let main = aux.replace(".aux_", ".");
            let v = self.bn_state[&main].clone();
            self.bn_state.insert(aux, v);
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let expect = &self.spec.input_shape;
        if batch.ndim() != 4 || batch.shape()[1..] != expect[..] {
            return Err(Error::Shape(format!(
                "batch {:?} does not match input shape (N, {}, {}, {})",
                batch.shape(),
                expect[0],
                expect[1],
                expect[2]
            )));
        }
        batch.ensure_finite("input batch")?;
        Ok(batch.batch())
    }

    /// Runs the network in the model's current mode. In train mode the active
    /// branch's running statistics are updated.
    pub fn forward(&mut self, batch: &Tensor, retain: bool) -> Result<(Tensor, Option<ActivationCache>)> {
        let n = self.check_batch(batch)?;
        let train = self.mode == Mode::Train;
        let mut rng = self.rng.clone();
        let out = forward_generic::<f32, _>(
            &self.spec,
            &self.shapes,
            &self.params,
            &self.bn_state,
            batch.data().to_vec(),
            n,
            train,
            self.bn_branch,
            Some(&mut rng),
            retain,
        )?;
        self.rng = rng;
        if train && self.update_running_stats {
            for (name, values) in &out.stat_updates {
                let t = self.bn_state.get_mut(name).unwrap();
                t.data_mut().copy_from_slice(values);
            }
        }
        self.finish_forward(out, n, batch, retain)
    }

    /// Eval-mode forward that never mutates the model (running statistics,
    /// stochastic layers off). Safe for concurrent readers.
    pub fn forward_eval(&self, batch: &Tensor, retain: bool) -> Result<(Tensor, Option<ActivationCache>)> {
        let n = self.check_batch(batch)?;
        let out = forward_generic::<f32, _>(
            &self.spec,
            &self.shapes,
            &self.params,
            &self.bn_state,
            batch.data().to_vec(),
            n,
            false,
            self.bn_branch,
            None,
            retain,
        )?;
        self.finish_forward(out, n, batch, retain)
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_eval(batch, false)?.0)
    }

    /// Eval-mode top-1 predictions (lowest index wins ties).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.argmax_rows())
    }

    fn finish_forward(
        &self,
        out: ForwardOutput<f32>,
        n: usize,
        batch: &Tensor,
        retain: bool,
    ) -> Result<(Tensor, Option<ActivationCache>)> {
        let logits = Tensor::new(vec![n, self.spec.num_classes], out.logits)?;
        let cache = if retain {
            let mut acts = Vec::with_capacity(out.acts.len() + 1);
            acts.push(batch.clone());
            for (i, a) in out.acts.into_iter().enumerate() {
                let mut shape = vec![n];
                shape.extend_from_slice(&self.shapes[i + 1]);
                acts.push(Tensor::new(shape, a)?);
            }
            Some(ActivationCache { acts, aux: out.aux })
        } else {
            None
        };
        Ok((logits, cache))
    }

    /// Backpropagates `loss_grad` (d loss / d logits) through a retained forward.
    pub fn backward(&self, cache: &ActivationCache, loss_grad: &Tensor) -> Result<Gradients> {
        let (params, input, _) = self.backward_impl(cache, loss_grad, true, None)?;
        Ok(Gradients { params: params.unwrap(), input })
    }

    /// Input gradient only; parameter gradients are skipped.
    pub fn backward_input(&self, cache: &ActivationCache, loss_grad: &Tensor) -> Result<Tensor> {
        Ok(self.backward_impl(cache, loss_grad, false, None)?.1)
    }

    /// Input gradient plus the gradient flowing into the output of layer `capture`.
    pub fn backward_capture(
        &self,
        cache: &ActivationCache,
        loss_grad: &Tensor,
        capture: usize,
    ) -> Result<(Tensor, Tensor)> {
        let (_, input, captured) = self.backward_impl(cache, loss_grad, false, Some(capture))?;
        Ok((input, captured.unwrap()))
    }

    fn backward_impl(
        &self,
        cache: &ActivationCache,
        loss_grad: &Tensor,
        want_params: bool,
        capture: Option<usize>,
    ) -> Result<(Option<ParamMap>, Tensor, Option<Tensor>)> {
        let layers = &self.spec.layers;
        if cache.acts.len() != layers.len() + 1 || cache.aux.len() != layers.len() {
            return Err(Error::Shape("activation cache does not belong to this model".into()));
        }
        let n = cache.batch_size();
        if loss_grad.shape() != cache.logits().shape() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} vs logits {:?}",
                loss_grad.shape(),
                cache.logits().shape()
            )));
        }
        if let Some(c) = capture {
            if c >= layers.len() {
                return Err(Error::InvalidArgument(format!("no layer {c}")));
            }
        }
        let mut grads = want_params.then(ParamMap::new);
        let mut captured = None;
        let mut dout: Vec<f32> = loss_grad.data().to_vec();
        for i in (0..layers.len()).rev() {
            if capture == Some(i) {
                let mut shape = vec![n];
                shape.extend_from_slice(&self.shapes[i + 1]);
                captured = Some(Tensor::new(shape, dout.clone())?);
            }
            let x = cache.acts[i].data();
            let inp = &self.shapes[i];
            let need_input = true;
            let mut put = |field: &str, shape: Vec<usize>, v: Vec<f32>| -> Result<()> {
                if let Some(g) = grads.as_mut() {
                    g.insert(param_name(i, field), Tensor::new(shape, v)?);
                }
                Ok(())
            };
            dout = match (&layers[i], &cache.aux[i]) {
                (LayerKind::Conv2d { out_channels, kernel, stride, padding }, _) => {
                    let g = ConvGeom::new(inp[0], inp[1], inp[2], *out_channels, *kernel, *stride, *padding);
                    let w = self.params.slice(&param_name(i, "weight"));
                    let (dx, pg) = kernels::conv2d_backward(x, n, &g, w, &dout, need_input, want_params);
                    if let Some(pg) = pg {
                        put("weight", vec![g.o, g.c, g.k, g.k], pg.weight)?;
                        put("bias", vec![g.o], pg.bias)?;
                    }
                    dx.unwrap()
                }
                (LayerKind::Linear { out_features }, _) => {
                    let w = self.params.slice(&param_name(i, "weight"));
                    let (dx, pg) =
                        kernels::linear_backward(x, n, inp[0], *out_features, w, &dout, need_input, want_params);
                    if let Some(pg) = pg {
                        put("weight", vec![*out_features, inp[0]], pg.weight)?;
                        put("bias", vec![*out_features], pg.bias)?;
                    }
                    dx.unwrap()
                }
                (LayerKind::Relu, _) => kernels::relu_backward(x, &dout),
                (LayerKind::SmoothActivation, _) => kernels::silu_backward(x, &dout),
                (LayerKind::MaxPool { .. }, LayerAux::MaxIdx(idx)) => kernels::maxpool_backward(x.len(), idx, &dout),
                (LayerKind::AvgPool { kernel }, _) => {
                    kernels::avgpool_backward(n, inp[0], inp[1], inp[2], *kernel, &dout)
                }
                (LayerKind::BlurPool { stride, kernel }, _) => {
                    kernels::blurpool_backward(n, inp[0], inp[1], inp[2], *stride, *kernel, &dout)
                }
                (LayerKind::DwtPool, _) => kernels::dwt_backward(n, inp[0], inp[1], inp[2], &dout),
                (LayerKind::BatchNorm | LayerKind::SwitchableBatchNorm, LayerAux::Bn(aux)) => {
                    let c = inp[0];
                    let hw: usize = inp[1..].iter().product();
                    let gamma = self.params.slice(&param_name(i, "gamma"));
                    let (dx, pg) = kernels::bn_backward(n, c, hw, gamma, aux, &dout, want_params);
                    if let Some((dg, db)) = pg {
                        put("gamma", vec![c], dg)?;
                        put("beta", vec![c], db)?;
                    }
                    dx
                }
                (LayerKind::PermutedAdaIn { .. } | LayerKind::CrossNorm { .. }, LayerAux::Style(aux)) => {
                    kernels::style_backward(n, inp[0], inp[1] * inp[2], aux, &dout)
                }
                (LayerKind::PermutedAdaIn { .. } | LayerKind::CrossNorm { .. }, LayerAux::None) => dout,
                (LayerKind::Flatten, _) => dout,
                (LayerKind::GlobalAvgPool, _) => kernels::gap_backward(n, inp[0], inp[1] * inp[2], &dout),
                (kind, _) => {
                    return Err(Error::Shape(format!("cache entry for layer {i} ({}) is inconsistent", kind.name())))
                }
            };
            if !dout.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at layer {i} ({})", layers[i].name())));
            }
        }
        let input = Tensor::new(cache.acts[0].shape().to_vec(), dout)?;
        Ok((grads, input, captured))
    }
}

fn check_same_layout(current: &ParamMap, incoming: &ParamMap, what: &str) -> Result<()> {
    if current.len() != incoming.len() {
        return Err(Error::ParamMismatch(format!("{what} count {} vs {}", incoming.len(), current.len())));
    }
    for ((a, ta), (b, tb)) in current.iter().zip(incoming) {
        if a != b {
            return Err(Error::ParamMismatch(format!("{what} `{b}` where `{a}` expected")));
        }
        if ta.shape() != tb.shape() {
            return Err(Error::ParamMismatch(format!("{what} `{a}` shape {:?} vs {:?}", tb.shape(), ta.shape())));
        }
    }
    Ok(())
}

fn bn_stat_names(layer: usize, branch: BnBranch, kind: &LayerKind) -> (String, String) {
    let aux = matches!(kind, LayerKind::SwitchableBatchNorm) && branch == BnBranch::Auxiliary;
    if aux {
        (param_name(layer, "aux_running_mean"), param_name(layer, "aux_running_var"))
    } else {
        (param_name(layer, "running_mean"), param_name(layer, "running_var"))
    }
}

fn random_style_perm(kind: &LayerKind, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let p_swap = match kind {
        LayerKind::PermutedAdaIn { p_swap } | LayerKind::CrossNorm { p_swap } => *p_swap,
        _ => return None,
    };
    let draw: f32 = rng.random();
    if draw >= p_swap || n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    match kind {
        LayerKind::PermutedAdaIn { .. } => Some(order),
        _ => {
            // CrossNorm: exchange statistics within random disjoint pairs.
            let mut perm: Vec<usize> = (0..n).collect();
            for pair in order.chunks_exact(2) {
                perm[pair[0]] = pair[1];
                perm[pair[1]] = pair[0];
            }
            Some(perm)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_generic<F: Real, P: ParamStore<F>>(
    spec: &ModelSpec,
    shapes: &[Vec<usize>],
    params: &P,
    state: &ParamMap,
    input: Vec<F>,
    n: usize,
    train: bool,
    branch: BnBranch,
    mut rng: Option<&mut ChaCha8Rng>,
    retain: bool,
) -> Result<ForwardOutput<F>> {
    let mut acts: Vec<Vec<F>> = Vec::with_capacity(spec.layers.len());
    let mut aux = Vec::with_capacity(spec.layers.len());
    let mut stat_updates = Vec::new();
    let mut owned = input;
    for (i, layer) in spec.layers.iter().enumerate() {
        let inp = &shapes[i];
        let cur: &[F] = match acts.last() {
            Some(prev) if retain => prev,
            _ => &owned,
        };
        let (next, a) = match layer {
            LayerKind::Conv2d { out_channels, kernel, stride, padding } => {
                let g = ConvGeom::new(inp[0], inp[1], inp[2], *out_channels, *kernel, *stride, *padding);
                let w = params.slice(&param_name(i, "weight"));
                let b = params.slice(&param_name(i, "bias"));
                (kernels::conv2d_forward(cur, n, &g, w, b), LayerAux::None)
            }
            LayerKind::Linear { out_features } => {
                let w = params.slice(&param_name(i, "weight"));
                let b = params.slice(&param_name(i, "bias"));
                (kernels::linear_forward(cur, n, inp[0], *out_features, w, b), LayerAux::None)
            }
            LayerKind::Relu => (kernels::relu_forward(cur), LayerAux::None),
            LayerKind::SmoothActivation => (kernels::silu_forward(cur), LayerAux::None),
            LayerKind::MaxPool { kernel } => {
                let (y, idx) = kernels::maxpool_forward(cur, n, inp[0], inp[1], inp[2], *kernel);
                (y, LayerAux::MaxIdx(idx))
            }
            LayerKind::AvgPool { kernel } => {
                (kernels::avgpool_forward(cur, n, inp[0], inp[1], inp[2], *kernel), LayerAux::None)
            }
            LayerKind::BlurPool { stride, kernel } => (
                kernels::blurpool_forward(cur, n, inp[0], inp[1], inp[2], *stride, *kernel),
                LayerAux::None,
            ),
            LayerKind::DwtPool => (kernels::dwt_forward(cur, n, inp[0], inp[1], inp[2]), LayerAux::None),
            LayerKind::BatchNorm | LayerKind::SwitchableBatchNorm => {
                let c = inp[0];
                let hw: usize = inp[1..].iter().product();
                let gamma = params.slice(&param_name(i, "gamma"));
                let beta = params.slice(&param_name(i, "beta"));
                let (mean_name, var_name) = bn_stat_names(i, branch, layer);
                if train {
                    let (mean, var) = kernels::bn_batch_stats(cur, n, c, hw);
                    let m = (n * hw) as f64;
                    let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                    let rm = state[&mean_name].data();
                    let rv = state[&var_name].data();
                    let new_mean: Vec<f32> = (0..c)
                        .map(|ch| ((1.0 - BN_MOMENTUM) * rm[ch] as f64 + BN_MOMENTUM * mean[ch]) as f32)
                        .collect();
                    let new_var: Vec<f32> = (0..c)
                        .map(|ch| ((1.0 - BN_MOMENTUM) * rv[ch] as f64 + BN_MOMENTUM * var[ch] * unbias) as f32)
                        .collect();
                    stat_updates.push((mean_name, new_mean));
                    stat_updates.push((var_name, new_var));
                    let (y, a) = kernels::bn_forward(cur, n, c, hw, gamma, beta, &mean, &var, true);
                    (y, LayerAux::Bn(a))
                } else {
                    let mean: Vec<f64> = state[&mean_name].data().iter().map(|&v| v as f64).collect();
                    let var: Vec<f64> = state[&var_name].data().iter().map(|&v| v as f64).collect();
                    let (y, a) = kernels::bn_forward(cur, n, c, hw, gamma, beta, &mean, &var, false);
                    (y, LayerAux::Bn(a))
                }
            }
            LayerKind::PermutedAdaIn { .. } | LayerKind::CrossNorm { .. } => {
                let perm = match (train, rng.as_deref_mut()) {
                    (true, Some(r)) => random_style_perm(layer, n, r),
                    _ => None,
                };
                match perm {
                    Some(perm) => {
                        let (y, a) = kernels::style_forward(cur, n, inp[0], inp[1] * inp[2], perm);
                        (y, LayerAux::Style(a))
                    }
                    None => (cur.to_vec(), LayerAux::None),
                }
            }
            LayerKind::Flatten => (cur.to_vec(), LayerAux::None),
            LayerKind::GlobalAvgPool => (kernels::gap_forward(cur, n, inp[0], inp[1] * inp[2]), LayerAux::None),
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("output of layer {i} ({})", layer.name())));
        }
        if retain {
            acts.push(next);
            aux.push(a);
        } else {
            owned = next;
        }
    }
    let logits = if retain { acts.last().cloned().unwrap_or(owned) } else { owned };
    Ok(ForwardOutput { logits, acts, aux, stat_updates })
}
