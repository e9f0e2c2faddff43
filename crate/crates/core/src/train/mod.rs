//! Training loops (standard, adversarial, AdvProp), clean evaluation and
//! WiSE-FT weight interpolation.

mod wise;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackBudget};
use crate::augment::{apr_batch, augmix_view, augmix_views, basic_augs, jensen_shannon, AugMixConfig, BasicAugConfig, JS_LOSS_WEIGHT};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, cross_entropy_per_sample, BnBranch, LayerKind, Mode, Model, ParamMap};
use crate::optim::{ema_update, lr_at, preset, sam_step, OptimState, OptimizerConfig, SamConfig, Schedule};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::Tensor;

pub use wise::wise_ft;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    Adversarial,
    Advprop,
}

/// Linf PGD used as the inner maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerAttack {
    pub epsilon: f32,
    pub steps: usize,
    pub step_size: f32,
    pub random_start: bool,
    /// Epochs over which radius and step grow linearly from 0 to their full
    /// values (per batch); 0 attacks at full strength from the start.
    #[serde(default)]
    pub warmup_epochs: f64,
}

impl InnerAttack {
    /// PGD-5 with step ε/4 and a random start.
    pub fn pgd5(epsilon: f32) -> Self {
        InnerAttack { epsilon, steps: 5, step_size: epsilon / 4.0, random_start: true, warmup_epochs: 0.0 }
    }

    /// Fraction of the full radius used at `epoch + progress`.
    pub fn ramp(&self, epoch: usize, progress: f64) -> f32 {
        if self.warmup_epochs <= 0.0 {
            1.0
        } else {
            ((epoch as f64 + progress) / self.warmup_epochs).min(1.0) as f32
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPipeline {
    pub basic: Option<BasicAugConfig>,
    pub augmix: Option<AugMixConfig>,
    /// Probability of in-batch amplitude-phase recombination.
    pub apr_prob: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentPipeline,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub mode: TrainMode,
    pub inner: Option<InnerAttack>,
    pub label_smoothing: f32,
    pub ema_decay: Option<f32>,
    pub sam: Option<SamConfig>,
    pub seed: u64,
}

impl TrainConfig {
    /// Standard-mode config from a named preset compressed to `epochs`.
    pub fn from_preset(name: &str, epochs: usize, seed: u64) -> Result<Self> {
        let p = preset(name, Some(epochs))?;
        Ok(TrainConfig {
            preset: p.name,
            epochs,
            batch_size: p.batch_size,
            augment: AugmentPipeline::default(),
            optimizer: p.optimizer,
            schedule: p.schedule,
            mode: TrainMode::Standard,
            inner: None,
            label_smoothing: p.label_smoothing,
            ema_decay: p.ema_decay,
            sam: None,
            seed,
        })
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if let Some(s) = &self.sam {
            s.validate()?;
        }
        if let Some(a) = &self.augment.augmix {
            a.validate()?;
        }
        if let Some(b) = &self.augment.basic {
            b.validate()?;
        }
        if self.mode != TrainMode::Standard {
            let inner = self
                .inner
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{:?} training needs an inner attack budget", self.mode)))?;
            self.inner_budget(inner, 0).validate()?;
            if !(inner.warmup_epochs >= 0.0 && inner.warmup_epochs.is_finite()) {
                return Err(Error::InvalidArgument(format!("warmup_epochs {} must be finite and >= 0", inner.warmup_epochs)));
            }
        }
        if self.mode == TrainMode::Advprop && !model.spec().layers.iter().any(|l| matches!(l, LayerKind::SwitchableBatchNorm)) {
            return Err(Error::InvalidArgument("advprop training needs SwitchableBatchNorm layers in the model".into()));
        }
        Ok(())
    }

    fn inner_budget(&self, inner: &InnerAttack, seed: u64) -> AttackBudget {
        AttackBudget::linf(inner.epsilon, inner.steps.max(1), inner.step_size.max(f32::MIN_POSITIVE), seed)
    }
}

/// One record per completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over batches (the optimized objective).
    pub loss: f64,
    /// Mean clean cross-entropy on the (augmented) training batches.
    pub clean_loss: f64,
    /// Accuracy on the (augmented) clean training batches.
    pub clean_accuracy: f64,
    /// Mean over batches of (adversarial − clean) loss; adversarial modes only.
    pub adv_gap_mean: Option<f64>,
    pub adv_gap_min: Option<f64>,
    pub lr_first: f64,
    pub lr_last: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
}

/// Owns the optimizer state, EMA weights and epoch counter of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub state: OptimState,
    pub ema: Option<ParamMap>,
    pub epoch: usize,
    pub log: TrainLog,
    /// Wall time per epoch in seconds, kept apart from the deterministic log.
    pub wall_times: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &Model) -> Result<Self> {
        config.validate(model)?;
        let state = OptimState::new(config.optimizer.clone())?.with_no_decay(model.norm_param_names());
        let ema = config.ema_decay.map(|_| model.params().clone());
        Ok(Trainer { config, state, ema, epoch: 0, log: TrainLog::default(), wall_times: vec![] })
    }

    /// Runs one epoch in the configured mode.
    pub fn train_epoch(&mut self, model: &mut Model, data: &Dataset) -> Result<EpochLog> {
        let mode = self.config.mode;
        self.run_epoch(model, data, mode)
    }

    pub fn train_epoch_standard(&mut self, model: &mut Model, data: &Dataset) -> Result<EpochLog> {
        self.run_epoch(model, data, TrainMode::Standard)
    }

    pub fn train_epoch_adversarial(&mut self, model: &mut Model, data: &Dataset) -> Result<EpochLog> {
        self.run_epoch(model, data, TrainMode::Adversarial)
    }

    pub fn train_epoch_advprop(&mut self, model: &mut Model, data: &Dataset) -> Result<EpochLog> {
        self.run_epoch(model, data, TrainMode::Advprop)
    }

    /// Model carrying the EMA weights (or a plain clone without EMA).
    pub fn ema_model(&self, model: &Model) -> Result<Model> {
        let mut m = model.clone();
        if let Some(e) = &self.ema {
            m.set_params(e.clone())?;
        }
        Ok(m)
    }

    fn prepare_batch(&self, data: &Dataset, idx: &[usize], batch_seed: u64) -> Result<(Tensor, Option<[Tensor; 2]>)> {
        let aug = &self.config.augment;
        let mut x = data.images().select(idx)?;
        if let Some(b) = &aug.basic {
            x = basic_augs(&x, derive_seed(batch_seed, &[1]), b)?;
        }
        if let Some(p) = aug.apr_prob {
            x = apr_batch(&x, derive_seed(batch_seed, &[2]), p)?;
        }
        let mut views = None;
        if let Some(cfg) = &aug.augmix {
            let s = derive_seed(batch_seed, &[3]);
            if cfg.js_loss_enabled {
                views = Some(augmix_views(&x, cfg, s)?);
            } else {
                x = augmix_view(&x, cfg, s, 0)?;
            }
        }
        Ok((x, views))
    }

    fn run_epoch(&mut self, model: &mut Model, data: &Dataset, mode: TrainMode) -> Result<EpochLog> {
        let start = Instant::now();
        let cfg = self.config.clone();
        if mode != cfg.mode {
            TrainConfig { mode, ..cfg.clone() }.validate(model)?;
        }
        model.set_mode(Mode::Train);
        model.set_bn_branch(BnBranch::Main);
        let epoch = self.epoch;
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut schedule = cfg.schedule.clone();
        schedule.steps_per_epoch = batches.len();
        let (mut loss_sum, mut clean_sum, mut correct) = (0.0f64, 0.0f64, 0usize);
        let mut gaps = Vec::new();
        let (mut lr_first, mut lr_last) = (0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let batch_seed = derive_seed(cfg.seed, &[stream::AUGMENT, epoch as u64, b as u64]);
            let lr = lr_at(&schedule, epoch, b);
            if b == 0 {
                lr_first = lr;
            }
            lr_last = lr;
            let y: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let (x, views) = self.prepare_batch(data, idx, batch_seed)?;
            let adv = if mode == TrainMode::Standard {
                None
            } else {
                let inner = cfg.inner.as_ref().expect("validated");
                let mut budget = cfg.inner_budget(inner, derive_seed(batch_seed, &[4]));
                let f = inner.ramp(epoch, b as f64 / batches.len() as f64);
                budget.epsilon *= f;
                budget.step_size = (budget.step_size * f).max(f32::MIN_POSITIVE);
                let out = pgd(&*model, &x, &y, &budget, inner.random_start)?;
                let clean = cross_entropy_per_sample(&model.logits(&x)?, &y)?.0;
                let gap = out.best_loss.iter().zip(&clean).map(|(a, c)| (*a - *c) as f64).sum::<f64>() / y.len() as f64;
                gaps.push(gap);
                Some(out.adv_inputs)
            };
            let step = BatchStep { x: &x, y: &y, views: views.as_ref(), adv: adv.as_ref(), mode, smoothing: cfg.label_smoothing, seed: batch_seed };
            let stats = match &cfg.sam {
                Some(sam) => {
                    let mut params = model.params().clone();
                    let mut first = None;
                    let res = sam_step(
                        &mut params,
                        |p, pass| {
                            model.set_params(p.clone())?;
                            model.set_update_running_stats(pass == 0);
                            let r = step.grads(model);
                            model.set_update_running_stats(true);
                            let (s, g) = r?;
                            if pass == 0 {
                                first = Some(s);
                            }
                            Ok((s.loss as f32, g))
                        },
                        &mut self.state,
                        sam,
                        lr as f32,
                    );
                    model.set_update_running_stats(true);
                    res?;
                    model.set_params(params)?;
                    first.expect("clean pass ran")
                }
                None => {
                    let (s, g) = step.grads(model)?;
                    let mut params = model.params().clone();
                    self.state.step(&mut params, &g, lr as f32)?;
                    model.set_params(params)?;
                    s
                }
            };
            if !stats.loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            if let (Some(ema), Some(decay)) = (self.ema.as_mut(), cfg.ema_decay) {
                ema_update(ema, model.params(), decay)?;
            }
            loss_sum += stats.loss;
            clean_sum += stats.clean_loss;
            correct += stats.correct;
        }
        let nb = batches.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / nb,
            clean_loss: clean_sum / nb,
            clean_accuracy: correct as f64 / n as f64,
            adv_gap_mean: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            adv_gap_min: gaps.iter().cloned().reduce(f64::min),
            lr_first,
            lr_last,
            batches: batches.len(),
        };
        self.epoch += 1;
        self.log.entries.push(entry.clone());
        self.wall_times.push(start.elapsed().as_secs_f64());
        Ok(entry)
    }
}

#[derive(Clone, Copy)]
struct BatchStats {
    loss: f64,
    clean_loss: f64,
    correct: usize,
}

/// Everything needed to evaluate the training objective of one batch.
struct BatchStep<'a> {
    x: &'a Tensor,
    y: &'a [usize],
    views: Option<&'a [Tensor; 2]>,
    adv: Option<&'a Tensor>,
    mode: TrainMode,
    smoothing: f32,
    seed: u64,
}

fn accumulate(into: &mut ParamMap, from: &ParamMap, scale: f32) {
    for (k, t) in into.iter_mut() {
        for (a, &b) in t.data_mut().iter_mut().zip(from[k].data()) {
            *a = scale * (*a + b);
        }
    }
}

impl BatchStep<'_> {
    fn correct(logits: &Tensor, y: &[usize]) -> usize {
        logits.argmax_rows().iter().zip(y).filter(|(p, l)| p == l).count()
    }

    /// Loss statistics and parameter gradients at the model's current weights.
    fn grads(&self, model: &mut Model) -> Result<(BatchStats, ParamMap)> {
        let n = self.y.len();
        model.reseed_stochastic(self.seed);
        model.set_bn_branch(BnBranch::Main);
        if let Some([v1, v2]) = self.views {
            // clean and both AugMix views share one forward, as in the reference recipe
            let all = Tensor::concat(&[self.x, v1, v2])?;
            let (logits, cache) = model.forward(&all, true)?;
            let parts: Vec<Tensor> = (0..3).map(|p| logits.select(&(p * n..(p + 1) * n).collect::<Vec<_>>())).collect::<Result<_>>()?;
            let (ce, dce) = cross_entropy(&parts[0], self.y, self.smoothing)?;
            let (js, djs) = jensen_shannon([&parts[0], &parts[1], &parts[2]])?;
            let mut grad = Vec::with_capacity(logits.numel());
            for (p, dj) in djs.iter().enumerate() {
                for (j, &g) in dj.data().iter().enumerate() {
                    let base = if p == 0 { dce.data()[j] } else { 0.0 };
                    grad.push(base + JS_LOSS_WEIGHT * g);
                }
            }
            let grad = Tensor::new(logits.shape().to_vec(), grad)?;
            let g = model.backward(cache.as_ref().expect("retained"), &grad)?;
            let stats = BatchStats { loss: ce as f64 + JS_LOSS_WEIGHT as f64 * js, clean_loss: ce as f64, correct: Self::correct(&parts[0], self.y) };
            return Ok((stats, g.params));
        }
        match (self.mode, self.adv) {
            (TrainMode::Standard, _) | (_, None) => {
                let (logits, cache) = model.forward(self.x, true)?;
                let (loss, dl) = cross_entropy(&logits, self.y, self.smoothing)?;
                let g = model.backward(cache.as_ref().expect("retained"), &dl)?;
                Ok((BatchStats { loss: loss as f64, clean_loss: loss as f64, correct: Self::correct(&logits, self.y) }, g.params))
            }
            (TrainMode::Adversarial, Some(adv)) => {
                let clean_logits = model.logits(self.x)?;
                let (clean, _) = cross_entropy(&clean_logits, self.y, self.smoothing)?;
                let (logits, cache) = model.forward(adv, true)?;
                let (loss, dl) = cross_entropy(&logits, self.y, self.smoothing)?;
                let g = model.backward(cache.as_ref().expect("retained"), &dl)?;
                Ok((BatchStats { loss: loss as f64, clean_loss: clean as f64, correct: Self::correct(&clean_logits, self.y) }, g.params))
            }
            (TrainMode::Advprop, Some(adv)) => {
                let (logits, cache) = model.forward(self.x, true)?;
                let (clean, dl) = cross_entropy(&logits, self.y, self.smoothing)?;
                let mut g = model.backward(cache.as_ref().expect("retained"), &dl)?.params;
                model.reseed_stochastic(self.seed);
                model.set_bn_branch(BnBranch::Auxiliary);
                let fwd = model.forward(adv, true);
                model.set_bn_branch(BnBranch::Main);
                let (adv_logits, adv_cache) = fwd?;
                let (adv_loss, dadv) = cross_entropy(&adv_logits, self.y, self.smoothing)?;
                let ga = model.backward(adv_cache.as_ref().expect("retained"), &dadv)?;
                accumulate(&mut g, &ga.params, 0.5);
                let stats = BatchStats {
                    loss: 0.5 * (clean as f64 + adv_loss as f64),
                    clean_loss: clean as f64,
                    correct: Self::correct(&logits, self.y),
                };
                Ok((stats, g))
            }
        }
    }
}

/// Trains for `config.epochs` epochs and returns the trainer (log, EMA).
pub fn train(model: &mut Model, data: &Dataset, config: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(config, model)?;
    for _ in 0..t.config.epochs {
        t.train_epoch(model, data)?;
    }
    model.set_mode(Mode::Eval);
    Ok(t)
}

/// Top-1 accuracy (lowest index wins ties) and mean cross-entropy in eval mode.
pub fn evaluate_clean(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let n = data.len();
    let (mut correct, mut loss) = (0usize, 0.0f64);
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        let logits = model.forward_eval(&data.images().select(&idx)?, false)?.0;
        let y = &data.labels()[start..start + idx.len()];
        correct += BatchStep::correct(&logits, y);
        loss += cross_entropy_per_sample(&logits, y)?.0.iter().map(|&l| l as f64).sum::<f64>();
    }
    Ok((correct as f64 / n as f64, loss / n as f64))
}
