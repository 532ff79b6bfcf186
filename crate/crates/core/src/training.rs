//! Minibatch training with Adam and best-checkpoint selection by validation
//! micro F1.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamGrads, ParamStore, BCE_CLAMP};
pub use crate::corpus::SparseLabels;
use crate::error::{Error, Result};
use crate::metrics::{best_threshold, pr_auc, roc_auc, PredictionSet};
use crate::model::Model;
use crate::optim::{adam_step, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub threshold_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 4,
            max_steps: 1_000_000,
            eval_every: 10_000,
            seed: 0,
            threshold_grid: crate::metrics::default_grid(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 || (self.max_steps > 0 && self.eval_every > self.max_steps) {
            return Err(Error::Config(format!(
                "eval_every must be in 1..=max_steps ({}), got {}",
                self.max_steps, self.eval_every
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// One tokenized note with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub labels: SparseLabels,
}

/// Summed binary cross-entropy, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn example_loss(probs: &[f32], labels: &SparseLabels) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let p = (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if labels.contains(c) {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Mean loss and mean gradient over a batch. Each example gets its own
/// tape; gradients are summed in batch order.
pub fn batch_gradients(model: &Model, batch: &[&Example]) -> Result<(f32, ParamGrads<f32>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let mut total = ParamGrads::zeros_like(&model.params);
    let mut loss = 0.0f64;
    for ex in batch {
        let (l, g) = model.loss_and_grads(&ex.ids, &ex.labels)?;
        loss += l as f64;
        total.accumulate(&g)?;
    }
    let n = batch.len() as f32;
    total.scale(1.0 / n);
    Ok(((loss / batch.len() as f64) as f32, total))
}

/// One Adam update on the mean batch loss; returns that loss.
pub fn train_step(model: &mut Model, batch: &[&Example], state: &mut AdamState) -> Result<f32> {
    let (loss, grads) = batch_gradients(model, batch)?;
    if !loss.is_finite() {
        return Err(Error::Config(format!("non-finite training loss {loss}")));
    }
    adam_step(&mut model.params, &grads, state)?;
    Ok(loss)
}

pub fn predict_all(model: &Model, examples: &[Example]) -> Result<PredictionSet> {
    let mut preds = PredictionSet::new(model.arch.num_labels());
    for ex in examples {
        let probs = model.predict(&ex.ids)?;
        preds.push_note(&probs, &ex.labels)?;
    }
    Ok(preds)
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_pr_auc: Option<f64>,
    pub val_roc_auc: Option<f64>,
    pub threshold: f64,
}

pub const LOG_HEADER: &str = "step,train_loss,val_micro_f1,val_pr_auc,val_roc_auc";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        format!(
            "{},{:.6},{:.6},{},{}",
            self.step,
            self.train_loss,
            self.val_micro_f1,
            opt(self.val_pr_auc),
            opt(self.val_roc_auc)
        )
    }
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

/// Keeps the parameters from the evaluation with the highest score; the
/// earliest one wins ties.
#[derive(Clone, Debug)]
pub struct BestTracker {
    pub step: usize,
    pub f1: f64,
    pub threshold: f64,
    pub params: ParamStore<f32>,
    seen: bool,
}

impl BestTracker {
    pub fn new(initial: ParamStore<f32>, threshold: f64) -> Self {
        Self {
            step: 0,
            f1: f64::NEG_INFINITY,
            threshold,
            params: initial,
            seen: false,
        }
    }

    /// Returns true when this evaluation became the new best.
    pub fn offer(&mut self, step: usize, f1: f64, threshold: f64, params: &ParamStore<f32>) -> bool {
        if !self.seen || f1 > self.f1 {
            self.seen = true;
            self.step = step;
            self.f1 = f1;
            self.threshold = threshold;
            self.params = params.clone();
            true
        } else {
            false
        }
    }
}

/// Called after each validation pass.
pub trait TrainObserver {
    fn on_eval(&mut self, row: &LogRow, params: &ParamStore<f32>, is_best: bool) -> Result<()>;
}

impl TrainObserver for () {
    fn on_eval(&mut self, _: &LogRow, _: &ParamStore<f32>, _: bool) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: BestTracker,
    pub log: Vec<LogRow>,
    pub steps: usize,
}

/// Batch order for every step: reshuffled each epoch from the seed.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Runs `cfg.max_steps` updates, evaluating every `cfg.eval_every` steps
/// (and after the last step). With `max_steps == 0` the initial parameters
/// are returned untouched.
pub fn train_loop(
    model: &mut Model,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation corpus".into()));
    }
    let mut best = BestTracker::new(model.params.clone(), 0.5);
    let mut log = Vec::new();
    let mut state = AdamState::new(&model.params, cfg.lr);
    let mut sampler = BatchSampler::new(train.len(), cfg.seed);
    let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);

    for step in 1..=cfg.max_steps {
        let batch: Vec<&Example> = sampler
            .next_batch(cfg.batch_size.min(train.len()))
            .into_iter()
            .map(|i| &train[i])
            .collect();
        loss_sum += train_step(model, &batch, &mut state)? as f64;
        loss_count += 1;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let preds = predict_all(model, val)?;
            let (threshold, f1) = best_threshold(&preds, &cfg.threshold_grid)?;
            let row = LogRow {
                step,
                train_loss: loss_sum / loss_count as f64,
                val_micro_f1: f1,
                val_pr_auc: pr_auc(&preds),
                val_roc_auc: roc_auc(&preds),
                threshold,
            };
            let is_best = best.offer(step, f1, threshold, &model.params);
            observer.on_eval(&row, &model.params, is_best)?;
            log.push(row);
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(TrainOutcome {
        best,
        log,
        steps: cfg.max_steps,
    })
}
