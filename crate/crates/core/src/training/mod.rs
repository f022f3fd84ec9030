//! Optimization loop, evaluation, model selection and persistence.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Tensor};
use crate::data::{augment, images_to_tensor, AugmentParams, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{auc_per_class, dice, nll, pcss, pess, weighted_bce, AucReport, Metric, MetricsReport, Weighting, THRESHOLD};
use crate::model::Model;
use crate::rng::{substream, Rng};

/// Examples per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Consecutive failed evaluations before each decay.
    pub plateau_patience_evals: usize,
    /// Stop once this many updates pass without a validation improvement.
    pub early_stop_updates: usize,
    pub eval_every_updates: usize,
    pub max_updates: usize,
    pub seed: u64,
    pub selection_metric: Metric,
    /// Random affine augmentation of training images; `None` disables it.
    pub augment: Option<AugmentParams>,
    pub weighting: Weighting,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.001,
            lr_decay_factor: 0.9,
            plateau_patience_evals: 1,
            early_stop_updates: 10_000,
            eval_every_updates: 500,
            max_updates: 20_000,
            seed: 0,
            selection_metric: Metric::Nll,
            augment: None,
            weighting: Weighting::Pooled,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::config(format!("{key}: {msg}")));
        if self.batch_size < 2 {
            return fail("batch_size", "batch norm needs at least 2 examples per batch");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail("lr_decay_factor", "must lie in (0, 1)");
        }
        if self.plateau_patience_evals == 0 {
            return fail("plateau_patience_evals", "must be positive");
        }
        if self.eval_every_updates == 0 {
            return fail("eval_every_updates", "must be positive");
        }
        if self.early_stop_updates < self.eval_every_updates {
            return fail("early_stop_updates", "must be at least eval_every_updates");
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Learning-rate and early-stopping bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub decays: u32,
    pub failures_since_decay: usize,
    pub best: Option<f64>,
    pub last_improvement: usize,
}

impl Schedule {
    fn new() -> Self {
        Schedule {
            decays: 0,
            failures_since_decay: 0,
            best: None,
            last_improvement: 0,
        }
    }

    /// `lr0 * decay^k`, computed directly so the trace is exact.
    pub fn lr(&self, config: &TrainConfig) -> f64 {
        config.learning_rate * config.lr_decay_factor.powi(self.decays as i32)
    }

    /// Register one validation value; returns whether it improved.
    fn observe(&mut self, value: f64, update: usize, metric: Metric, patience: usize) -> bool {
        let improved = self.best.is_none_or(|b| metric.improves(value, b));
        if improved {
            self.best = Some(value);
            self.last_improvement = update;
            self.failures_since_decay = 0;
        } else {
            self.failures_since_decay += 1;
            if self.failures_since_decay >= patience {
                self.decays += 1;
                self.failures_since_decay = 0;
            }
        }
        improved
    }
}

/// One validation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub update: usize,
    /// Learning rate in force after this evaluation.
    pub lr: f64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub improved: bool,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxUpdates,
    EarlyStop,
    /// Non-finite loss or gradient; the model is the last finite state.
    Diverged { update: usize, message: String },
}

/// Best model seen for one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub update: usize,
    pub value: f64,
    pub model: Model,
}

/// Supplies validation reports during training.
pub trait Validator {
    fn validate(&mut self, model: &Model, update: usize) -> Result<MetricsReport>;
}

/// Evaluates on a held-out dataset.
pub struct DatasetValidator<'a>(pub &'a Dataset);

impl Validator for DatasetValidator<'_> {
    fn validate(&mut self, model: &Model, _update: usize) -> Result<MetricsReport> {
        evaluate(model, self.0)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Training loss of every update.
    pub loss_trace: Vec<f64>,
    /// Learning rate used by every update.
    pub lr_trace: Vec<f64>,
    pub best: BTreeMap<Metric, Snapshot>,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// Model selected on validation by `metric`, falling back to the final model.
    pub fn selected(&self, metric: Metric) -> &Model {
        self.best.get(&metric).map_or(&self.checkpoint.model, |s| &s.model)
    }
}

struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Batcher {
            order: (0..n).collect(),
            cursor: n,
            rng: substream(seed, "batching"),
        }
    }

    /// Next batch from a reshuffled pass over the data; a batch never spans two passes.
    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        batch
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NonFiniteGradient(_))
}

/// Train `model` on `train` with validation through `validator`.
pub fn train(model: Model, train: &Dataset, validator: &mut dyn Validator, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.label_names != model.labels() {
        return Err(Error::usage(format!(
            "training labels {:?} do not match the model's {:?}",
            train.label_names,
            model.labels()
        )));
    }
    if train.is_empty() && config.max_updates > 0 {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    if train.len() < 2 && config.max_updates > 0 {
        return Err(Error::usage("batch norm needs at least 2 training examples"));
    }
    let mut checkpoint = Checkpoint::new(model, config.clone(), train.ordering_id.clone());
    let mut batcher = Batcher::new(train.len(), config.seed);
    let mut aug_rng = substream(config.seed, "augment");
    let mut loss_trace = Vec::new();
    let mut lr_trace = Vec::new();
    let mut best: BTreeMap<Metric, Snapshot> = BTreeMap::new();
    let mut loss_since_eval = Vec::new();
    let mut stop = StopReason::MaxUpdates;

    while checkpoint.updates < config.max_updates {
        let lr = checkpoint.schedule.lr(config);
        let idx = batcher.next(config.batch_size);
        let labels: Vec<_> = idx.iter().map(|&i| train.examples[i].labels.clone()).collect();
        let images = match &config.augment {
            Some(params) => {
                let aug: Vec<_> = idx.iter().map(|&i| augment(&train.examples[i].image, params, &mut aug_rng)).collect();
                images_to_tensor(&aug.iter().collect::<Vec<_>>())?
            }
            None => images_to_tensor(&idx.iter().map(|&i| &train.examples[i].image).collect::<Vec<_>>())?,
        };
        let update = checkpoint.updates + 1;
        match step(&mut checkpoint, &images, &labels, config, lr) {
            Ok(loss) => {
                loss_trace.push(loss);
                lr_trace.push(lr);
                loss_since_eval.push(loss);
            }
            Err(e) if is_divergence(&e) => {
                log::error!("diverged at update {update}: {e}");
                stop = StopReason::Diverged {
                    update,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
        checkpoint.updates = update;

        if update.is_multiple_of(config.eval_every_updates) {
            let report = validator.validate(&checkpoint.model, update)?;
            let value = config.selection_metric.value(&report).ok_or_else(|| {
                Error::usage(format!(
                    "selection metric `{}` is not available for model {}",
                    config.selection_metric,
                    checkpoint.model.kind()
                ))
            })?;
            let improved = checkpoint.schedule.observe(
                value,
                update,
                config.selection_metric,
                config.plateau_patience_evals,
            );
            for metric in Metric::ALL {
                if let Some(v) = metric.value(&report) {
                    let better = best.get(&metric).is_none_or(|s| metric.improves(v, s.value));
                    if better {
                        best.insert(
                            metric,
                            Snapshot {
                                update,
                                value: v,
                                model: checkpoint.model.clone(),
                            },
                        );
                    }
                }
            }
            let train_loss = loss_since_eval.iter().sum::<f64>() / loss_since_eval.len().max(1) as f64;
            loss_since_eval.clear();
            let record = EvalRecord {
                update,
                lr: checkpoint.schedule.lr(config),
                train_loss,
                improved,
                report,
            };
            log::info!(
                "update {update}: train_loss {train_loss:.4} val {}={value:.4}{} lr {:.3e}",
                config.selection_metric,
                if improved { " *" } else { "" },
                record.lr
            );
            checkpoint.history.push(record);
            if update - checkpoint.schedule.last_improvement >= config.early_stop_updates {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint,
        loss_trace,
        lr_trace,
        best,
        stop,
    })
}

/// Forward, loss, backward and ADAM for one batch. Leaves the checkpoint
/// untouched when anything is non-finite.
fn step(checkpoint: &mut Checkpoint, images: &Tensor, labels: &[crate::decoders::LabelVector], config: &TrainConfig, lr: f64) -> Result<f64> {
    let model = &checkpoint.model;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let x = tape.constant(images.clone())?;
    let (m, stats) = model.forward(&mut tape, &bound, x, labels, Mode::Train)?;
    let loss = weighted_bce(&mut tape, m, labels, config.weighting)?;
    let loss_value = tape.value(loss).item()?;
    tape.backward(loss)?;
    let [enc, head] = model.param_sets();
    let mut grads = enc.grads(&tape, &bound.encoder);
    grads.extend(head.grads(&tape, &bound.head));
    drop(tape);

    let model = &mut checkpoint.model;
    let [enc, head] = model.param_sets_mut();
    let params: Vec<(&str, &mut Tensor)> = enc.iter_mut().chain(head.iter_mut()).collect();
    adam_step(params, &grads, &mut checkpoint.adam, lr)?;
    model.encoder_mut().apply_batch_stats(&stats)?;
    Ok(loss_value)
}

/// Metrics of `model` on `dataset` in eval mode. Chain models report NLL
/// from teacher-forced factors and the rest from greedy decoding; only the
/// independent model reports AUC.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<MetricsReport> {
    if dataset.label_names != model.labels() {
        return Err(Error::usage(format!(
            "dataset label order {:?} ({}) differs from the model's {:?}",
            dataset.label_names,
            dataset.ordering_id,
            model.labels()
        )));
    }
    let t = model.config().num_labels;
    let n = dataset.len();
    let mut factors = Vec::with_capacity(n * t);
    let mut decisions = Vec::with_capacity(n * t);
    let mut labels = Vec::with_capacity(n);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (images, y) = dataset.batch(chunk)?;
        let (f, d) = model.score_outputs(&images, &y)?;
        factors.extend_from_slice(f.data());
        decisions.extend_from_slice(d.data());
        labels.extend(y);
    }
    let factors = Tensor::new(vec![n, t], factors)?;
    let decisions = Tensor::new(vec![n, t], decisions)?;
    let auc = if model.kind().is_chain() {
        None
    } else {
        Some(AucReport::new(model.labels(), auc_per_class(&factors, &labels)?))
    };
    Ok(MetricsReport {
        nll: nll(&factors, &labels)?,
        auc,
        dice: dice(&decisions, &labels)?,
        pess: pess(&decisions, &labels, THRESHOLD)?,
        pcss: pcss(&decisions, &labels, THRESHOLD)?,
        threshold: THRESHOLD,
        n,
    })
}

/// Index of the evaluation that optimizes `metric`: lowest NLL, highest
/// otherwise; the earliest wins ties.
pub fn select_model(history: &[EvalRecord], metric: &str) -> Result<usize> {
    let metric: Metric = metric.parse()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in history.iter().enumerate() {
        if let Some(v) = metric.value(&r.report) {
            if best.is_none_or(|(_, b)| metric.improves(v, b)) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::usage(format!("no evaluation in the history reports `{metric}`")))
}

/// History as CSV behind a `#` comment naming the model and label order.
pub fn history_csv(checkpoint: &Checkpoint) -> String {
    let model = &checkpoint.model;
    let mut s = format!(
        "# model={} ordering={} labels={}\nupdate,lr,train_loss,improved,nll,auc_mean,dice,pess,pcss\n",
        model.kind(),
        checkpoint.ordering_id,
        model.labels().join("|")
    );
    for r in &checkpoint.history {
        let auc = r
            .report
            .auc
            .as_ref()
            .and_then(|a| a.mean)
            .map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.update, r.lr, r.train_loss, r.improved, r.report.nll, auc, r.report.dice, r.report.pess, r.report.pcss
        );
    }
    s
}
