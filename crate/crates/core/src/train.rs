//! AdamW training loops for the MLM head and the classification-head
//! baseline, plus the small hyperparameter sweep.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classifier_loss_and_grads, loss_and_grads, ClassSample, Mode, ModelCheckpoint, ModelConfig, Params, TrainingState};
use crate::objective::{MixCounts, Objective, TemplatedSample};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Instruct,
    FinetuneMlm,
    FinetuneCls,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Instruct => "instruct",
            Stage::FinetuneMlm => "finetune_mlm",
            Stage::FinetuneCls => "finetune_cls",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "instruct" => Ok(Stage::Instruct),
            "finetune_mlm" | "finetune" => Ok(Stage::FinetuneMlm),
            "finetune_cls" => Ok(Stage::FinetuneCls),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    LinearWarmupDecay,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "linear_warmup_decay" | "linear" => Ok(Schedule::LinearWarmupDecay),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Schedule,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Stop after this many optimizer steps (the schedule still spans the
    /// full run, so a later resume continues the same trajectory).
    pub stop_after: Option<u64>,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        TrainConfig {
            stage,
            epochs: 1,
            learning_rate: 3e-4,
            batch_size: 16,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            schedule: Schedule::LinearWarmupDecay,
            warmup_fraction: 0.05,
            seed: 0,
            checkpoint_every: 0,
            grad_clip: 1.0,
            stop_after: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0,1)".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.steps_per_epoch(n) * self.epochs as u64
    }

    /// Learning rate for 0-based `step` of a `total`-step run.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::LinearWarmupDecay => {
                let warm = ((self.warmup_fraction * total as f64).ceil() as u64).max(1);
                if step < warm {
                    self.learning_rate * (step + 1) as f64 / warm as f64
                } else {
                    let rest = total.saturating_sub(warm).max(1);
                    self.learning_rate * (total - step) as f64 / rest as f64
                }
            }
        }
    }
}

/// One JSON-lines record of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricsRecord {
    Step {
        step: u64,
        stage: String,
        loss: f64,
        lr: f64,
        objective_counts: MixCounts,
    },
    Epoch {
        epoch: usize,
        stage: String,
        eval_loss: f64,
        objective_counts: MixCounts,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn step_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                MetricsRecord::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("metrics serialize"));
            s.push('\n');
        }
        s
    }
}

pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: MetricsLog,
}

fn global_norm(g: &Params) -> f64 {
    g.squared_norm().sqrt()
}

fn adamw_step(ckpt: &mut ModelCheckpoint, grads: &Params, cfg: &TrainConfig, lr: f64) {
    let specs = ckpt.params.specs(&ckpt.config);
    let state = ckpt.training_state.get_or_insert_with(|| TrainingState {
        step: 0,
        m: ckpt.params.zeros_like(),
        v: ckpt.params.zeros_like(),
    });
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let params = ckpt.params.slices_mut();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for ((((p, m), v), g), spec) in params.into_iter().zip(ms).zip(vs).zip(grads.slices()).zip(&specs) {
        let wd = if spec.decay { cfg.weight_decay } else { 0.0 };
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon) + wd * p[i];
            p[i] -= lr * update;
        }
    }
}

fn scale(g: &mut Params, factor: f64) {
    for t in g.slices_mut() {
        t.iter_mut().for_each(|v| *v *= factor);
    }
}

type GradFn<'a, S> = dyn Fn(&Params, &ModelConfig, &[S], Mode) -> Result<(f64, Params)> + 'a;

/// Called with the checkpoint after every `checkpoint_every` steps.
pub type CheckpointHook<'a> = dyn FnMut(&ModelCheckpoint) -> Result<()> + 'a;

#[allow(clippy::too_many_arguments)]
fn run<S: Clone>(
    mut ckpt: ModelCheckpoint,
    data: &[S],
    eval: &[S],
    cfg: &TrainConfig,
    grad_fn: &GradFn<'_, S>,
    objective_of: &dyn Fn(&S) -> Option<Objective>,
    mut hook: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Sample("no training data".into()));
    }
    let per_epoch = cfg.steps_per_epoch(data.len());
    let total = cfg.total_steps(data.len());
    let start = ckpt.training_state.as_ref().map_or(0, |s| s.step);
    let end = cfg.stop_after.map_or(total, |s| s.min(total));
    let stage = cfg.stage.name().to_string();
    let mut log = MetricsLog::default();
    let mut expected = MixCounts::default();
    for s in data {
        if let Some(o) = objective_of(s) {
            expected.add(o);
        }
    }

    let mut order: Vec<usize> = Vec::new();
    let mut epoch_counts = MixCounts::default();
    let mut last_good = ckpt.clone();
    for step in start..end {
        let epoch = (step / per_epoch) as usize;
        let within = (step % per_epoch) as usize;
        if within == 0 || order.is_empty() {
            order = (0..data.len()).collect();
            order.shuffle(&mut rng::rng(rng::mix(cfg.seed, epoch as u64)));
            epoch_counts = MixCounts::default();
            for &i in &order[..(within * cfg.batch_size).min(data.len())] {
                if let Some(o) = objective_of(&data[i]) {
                    epoch_counts.add(o);
                }
            }
        }
        let batch: Vec<S> = order[within * cfg.batch_size..((within + 1) * cfg.batch_size).min(data.len())]
            .iter()
            .map(|&i| data[i].clone())
            .collect();
        let mut counts = MixCounts::default();
        for s in &batch {
            if let Some(o) = objective_of(s) {
                counts.add(o);
                epoch_counts.add(o);
            }
        }
        let mut dropout_rng = rng::sample_rng(rng::mix(cfg.seed, 0xD0), step);
        let (loss, mut grads) = grad_fn(&ckpt.params, &ckpt.config, &batch, Mode::Train(&mut dropout_rng))?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(last_good),
            });
        }
        if cfg.grad_clip > 0.0 {
            let norm = global_norm(&grads);
            if norm > cfg.grad_clip {
                scale(&mut grads, cfg.grad_clip / norm);
            }
        }
        let lr = cfg.lr_at(step, total);
        adamw_step(&mut ckpt, &grads, cfg, lr);
        if !ckpt.params.all_finite() {
            return Err(Error::Diverged {
                step,
                last_good: Box::new(last_good),
            });
        }
        log.records.push(MetricsRecord::Step {
            step,
            stage: stage.clone(),
            loss,
            lr,
            objective_counts: counts,
        });
        if within as u64 + 1 == per_epoch {
            if epoch_counts != expected {
                return Err(Error::Sample(format!(
                    "epoch {epoch} saw objective counts {epoch_counts:?}, mixer assigned {expected:?}"
                )));
            }
            let eval_set = if eval.is_empty() { &data[..data.len().min(256)] } else { eval };
            let (eval_loss, _) = grad_fn(&ckpt.params, &ckpt.config, eval_set, Mode::Eval)?;
            log.records.push(MetricsRecord::Epoch {
                epoch,
                stage: stage.clone(),
                eval_loss,
                objective_counts: epoch_counts.clone(),
            });
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(h) = hook.as_mut() {
                h(&ckpt)?;
            }
        }
        last_good = ckpt.clone();
    }
    if end == total {
        // Optimizer state only serves resumption; the next stage starts fresh.
        ckpt.training_state = None;
        ckpt.provenance.history.push(stage);
    }
    Ok(TrainOutcome { checkpoint: ckpt, log })
}

fn check_stage_data(cfg: &TrainConfig, data: &[TemplatedSample]) -> Result<()> {
    let allowed: &[Objective] = match cfg.stage {
        Stage::Pretrain => &[Objective::Mlm],
        Stage::Instruct => &Objective::ALL,
        Stage::FinetuneMlm => &[Objective::Atp],
        Stage::FinetuneCls => {
            return Err(Error::Config("finetune_cls trains the classification head; use train_classifier".into()))
        }
    };
    if let Some(s) = data.iter().find(|s| !allowed.contains(&s.objective)) {
        return Err(Error::Config(format!(
            "{} stage does not accept {} samples",
            cfg.stage.name(),
            s.objective.name()
        )));
    }
    Ok(())
}

/// Trains through the MLM head.
pub fn train(
    ckpt: ModelCheckpoint,
    data: &[TemplatedSample],
    eval: &[TemplatedSample],
    cfg: &TrainConfig,
    hook: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainOutcome> {
    check_stage_data(cfg, data)?;
    run(ckpt, data, eval, cfg, &loss_and_grads, &|s: &TemplatedSample| Some(s.objective), hook)
}

/// Trains the pooled classification head together with the backbone.
pub fn train_classifier(
    ckpt: ModelCheckpoint,
    data: &[ClassSample],
    eval: &[ClassSample],
    cfg: &TrainConfig,
    hook: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::FinetuneCls {
        return Err(Error::Config("train_classifier requires the finetune_cls stage".into()));
    }
    if ckpt.config.num_classes.is_none() {
        return Err(Error::Config("checkpoint has no classification head".into()));
    }
    run(ckpt, data, eval, cfg, &classifier_loss_and_grads, &|_| None, hook)
}

/// Fraction of supervised positions whose full-vocabulary argmax is the label.
pub fn mlm_accuracy(ckpt: &ModelCheckpoint, samples: &[TemplatedSample]) -> Result<f64> {
    let mut hit = 0usize;
    let mut n = 0usize;
    for s in samples {
        let (positions, labels): (Vec<usize>, Vec<u32>) = s.supervised().unzip();
        let logits = ckpt.mlm_logits_at(&s.input_ids, &s.attention_mask, &positions)?;
        for (row, &label) in logits.iter().zip(&labels) {
            n += 1;
            if argmax(row) == label as usize {
                hit += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

pub fn classifier_accuracy(ckpt: &ModelCheckpoint, samples: &[ClassSample]) -> Result<f64> {
    let mut hit = 0;
    for s in samples {
        if argmax(&ckpt.classify(s)?) == s.label {
            hit += 1;
        }
    }
    Ok(if samples.is_empty() { 0.0 } else { hit as f64 / samples.len() as f64 })
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub epochs: usize,
    pub accuracy: f64,
}

pub struct SweepOutcome {
    pub best: ModelCheckpoint,
    pub best_index: usize,
    pub table: Vec<SweepRow>,
}

/// Grid presets for fine-tuning a large pretrained backbone.
pub const MLM_FINETUNE_LRS: [f64; 3] = [2e-5, 3e-5, 5e-5];
pub const CLS_FINETUNE_LRS: [f64; 3] = [3e-5, 5e-5, 8e-5];
pub const FINETUNE_EPOCHS: [usize; 3] = [1, 2, 3];

pub fn grid(base: &TrainConfig, lrs: &[f64], epochs: &[usize]) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for &lr in lrs {
        for &e in epochs {
            let mut c = base.clone();
            c.learning_rate = lr;
            c.epochs = e;
            out.push(c);
        }
    }
    out
}

/// Index of the winning row: highest accuracy, then lower learning rate,
/// then fewer epochs.
pub fn select_best(table: &[SweepRow]) -> Option<usize> {
    (0..table.len()).min_by(|&a, &b| {
        let (x, y) = (&table[a], &table[b]);
        y.accuracy
            .total_cmp(&x.accuracy)
            .then(x.learning_rate.total_cmp(&y.learning_rate))
            .then(x.epochs.cmp(&y.epochs))
    })
}

/// Trains and scores every config, keeping the best checkpoint.
pub fn sweep(
    grid: &[TrainConfig],
    mut train_and_score: impl FnMut(&TrainConfig) -> Result<(ModelCheckpoint, f64)>,
) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut ckpts = Vec::with_capacity(grid.len());
    for cfg in grid {
        let (ck, acc) = train_and_score(cfg)?;
        table.push(SweepRow {
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            accuracy: acc,
        });
        ckpts.push(Some(ck));
    }
    let best_index = select_best(&table).unwrap();
    Ok(SweepOutcome {
        best: ckpts[best_index].take().unwrap(),
        best_index,
        table,
    })
}
