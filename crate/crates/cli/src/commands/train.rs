use serde_json::{json, Value};

use robustkit::augment::{AugMixConfig, BasicAugConfig};
use robustkit::nn::{build_model, checkpoint_hash, save_checkpoint, Mode, ModelSpec};
use robustkit::optim::{preset, OptimizerConfig, SamConfig};
use robustkit::train::{evaluate_clean, AugmentPipeline, InnerAttack, TrainConfig, TrainMode, Trainer};

use super::{load_data, Output, RESOLVED_CONFIG};
use crate::config::{load, snapshot, Arch, Command, TrainFile};
use crate::error::{Context, Result};

/// Fills preset-derived values into `file` and builds the training config.
pub fn resolve_train(mut file: TrainFile) -> Result<(TrainFile, TrainConfig)> {
    let t = &mut file.train;
    let p = preset(&t.preset, Some(t.epochs)).context(|| "resolving [train]".into())?;
    let batch_size = *t.batch_size.get_or_insert(p.batch_size);
    let mut schedule = p.schedule;
    schedule.base_lr = *t.lr.get_or_insert(schedule.base_lr);
    let mut optimizer = p.optimizer;
    let wd = match &mut optimizer {
        OptimizerConfig::Sgd { weight_decay, .. } | OptimizerConfig::AdamW { weight_decay, .. } => weight_decay,
    };
    *wd = *t.weight_decay.get_or_insert(*wd);
    let label_smoothing = *t.label_smoothing.get_or_insert(p.label_smoothing);
    // an explicit 0 switches EMA off
    let ema = *t.ema_decay.get_or_insert(p.ema_decay.unwrap_or(0.0));
    let inner = if t.mode == TrainMode::Standard {
        None
    } else {
        let step = *t.inner_step_size.get_or_insert(t.epsilon / 4.0);
        Some(InnerAttack {
            epsilon: t.epsilon,
            steps: t.inner_steps,
            step_size: step,
            random_start: true,
            warmup_epochs: t.warmup_epochs,
        })
    };
    let config = TrainConfig {
        preset: t.preset.clone(),
        epochs: t.epochs,
        batch_size,
        augment: AugmentPipeline {
            basic: t.basic_aug.then(BasicAugConfig::default),
            augmix: t.augmix.then(|| AugMixConfig { js_loss_enabled: t.js_loss, ..Default::default() }),
            apr_prob: t.apr_prob,
        },
        optimizer,
        schedule,
        mode: t.mode,
        inner,
        label_smoothing,
        ema_decay: (ema > 0.0).then_some(ema),
        sam: t.sam_rho.map(SamConfig::sam),
        seed: file.seed,
    };
    Ok((file, config))
}

pub fn run(file: Option<&str>, overrides: &[String], out: &Output) -> Result<Value> {
    let (cfg, tc) = resolve_train(load::<TrainFile>(Command::Train, file, overrides)?)?;
    out.write(RESOLVED_CONFIG, snapshot(&cfg)?.as_bytes())?;
    let data = load_data(&cfg.data, "data")?;
    let spec = match cfg.model.arch {
        Arch::DeskCnn => ModelSpec::desk_cnn(data.sample_shape(), data.num_classes()),
        Arch::DeskCnnSwitchable => ModelSpec::desk_cnn_switchable(data.sample_shape(), data.num_classes()),
    };
    let mut model = build_model(spec, cfg.seed).context(|| "building the model".into())?;
    let mut trainer = Trainer::new(tc, &model).context(|| "validating [train]".into())?;
    for _ in 0..cfg.train.epochs {
        let e = trainer.train_epoch(&mut model, &data).context(|| format!("training epoch {}", trainer.epoch))?;
        eprintln!("epoch {:>3}  loss {:.4}  clean acc {:.4}  lr {:.5}", e.epoch, e.loss, e.clean_accuracy, e.lr_last);
    }
    model.set_mode(Mode::Eval);
    let ckpt = save_checkpoint(&model);
    out.write("checkpoint.rbk", &ckpt)?;
    let mut log = String::new();
    for e in &trainer.log.entries {
        log.push_str(&serde_json::to_string(e).expect("serializable"));
        log.push('\n');
    }
    out.write("train_log.jsonl", log.as_bytes())?;
    let mut metrics = json!({
        "checkpoint_sha256": checkpoint_hash(&ckpt),
        "epochs": cfg.train.epochs,
        "train_samples": data.len(),
    });
    if trainer.ema.is_some() {
        let mut ema = trainer.ema_model(&model).context(|| "building the EMA model".into())?;
        ema.set_mode(Mode::Eval);
        let bytes = save_checkpoint(&ema);
        metrics["ema_checkpoint_sha256"] = json!(checkpoint_hash(&bytes));
        out.write("ema.rbk", &bytes)?;
    }
    if cfg.train.evaluate {
        let eval = load_data(&cfg.eval, "eval")?;
        let (acc, loss) = evaluate_clean(&model, &eval).context(|| "evaluating on [eval]".into())?;
        eprintln!("eval accuracy {acc:.4}  loss {loss:.4}");
        metrics["eval"] = json!({ "accuracy": acc, "loss": loss, "samples": eval.len(), "dataset": eval.provenance.describe() });
    }
    out.json("metrics.json", &metrics)?;
    Ok(json!({ "epoch_seconds": trainer.wall_times }))
}
