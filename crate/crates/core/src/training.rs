//! AdamW, early stopping, and the epoch loop with best-checkpoint selection.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, Ctx, ModelWeights, NetVars, CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub delta: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Samples per tape; gradients are accumulated up to `batch_size`.
    pub micro_batch: usize,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            max_epochs: 75,
            patience: 15,
            lr: 1.4e-4,
            weight_decay: 1e-5,
            delta: 2.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            micro_batch: 32,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.micro_batch == 0 {
            return bad("batch_size, max_epochs and micro_batch must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be in 1..=max_epochs");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        if !(self.delta > 0.0) || !(self.adam_eps > 0.0) {
            return bad("delta and adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive when set");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments per parameter, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One decoupled-weight-decay Adam update over every parameter.
    pub fn adamw_step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>, hp: &AdamParams) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::Contract(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for p in params {
            let n = p.tensor.numel();
            let m = self.m.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let grad = p.tensor.grad().expect("checked above").to_vec();
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= hp.lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best (lowest) score; stops after `patience` epochs without a
/// strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if !(score < b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_rmse: [f64; CHANNELS],
    pub val_rmse_avg: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse_ch1: f64,
    pub val_rmse_ch2: f64,
    pub val_rmse_ch3: f64,
    pub val_rmse_ch4: f64,
    pub val_rmse_avg: f64,
}

impl EpochRecord {
    pub fn val_rmse(&self) -> [f64; CHANNELS] {
        [self.val_rmse_ch1, self.val_rmse_ch2, self.val_rmse_ch3, self.val_rmse_ch4]
    }
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest average validation RMSE.
    pub best: ModelWeights,
    pub meta: CheckpointMeta,
    pub history: Vec<EpochRecord>,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// One optimizer step's gradient over `batch`, accumulated micro-batch by
/// micro-batch. Returns the batch mean loss.
fn accumulate_batch(weights: &mut ModelWeights, ctx: &mut Ctx, batch: &[&Example], cfg: &TrainConfig) -> Result<f64> {
    weights.zero_grad();
    let total = batch.len() as f64;
    let mut loss = 0.0;
    for chunk in batch.chunks(cfg.micro_batch) {
        let mut tape = Tape::new();
        let vars = NetVars::bind(weights, &mut tape)?;
        let inputs: Vec<_> = chunk.iter().map(|e| &e.input).collect();
        let targets: Vec<_> = chunk.iter().map(|e| e.target).collect();
        let l = model::batch_loss(&mut tape, ctx, &vars, weights.config(), &inputs, &targets, cfg.delta)?;
        let share = chunk.len() as f64 / total;
        let scaled = tape.scale(l, share)?;
        loss += tape.value(scaled).data()[0];
        let grads = tape.backward(scaled)?;
        tape.accumulate_into(&grads, weights)?;
    }
    Ok(loss)
}

/// Eval-mode predictions, one `[f64; 4]` per example.
pub fn predict_examples(weights: &ModelWeights, examples: &[Example]) -> Result<Vec<[f64; CHANNELS]>> {
    examples.iter().map(|e| model::predict(weights, &e.input)).collect()
}

pub fn channel_rmse(pred: &[[f64; CHANNELS]], examples: &[Example]) -> Result<[f64; CHANNELS]> {
    let mut out = [0.0; CHANNELS];
    for (c, o) in out.iter_mut().enumerate() {
        let p: Vec<f64> = pred.iter().map(|y| y[c]).collect();
        let r: Vec<f64> = examples.iter().map(|e| e.target[c]).collect();
        *o = metrics::rmse(&p, &r)?;
    }
    Ok(out)
}

pub fn train(
    initial: ModelWeights,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract(format!(
            "training needs non-empty datasets (train {}, val {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let mut weights = initial;
    let mut opt = OptimizerState::new();
    let hp = cfg.adam();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ctx = Ctx::train(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = weights.clone();
    let mut best_meta = None;
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        let mut seen = 0usize;
        let mut capped = false;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let loss = accumulate_batch(&mut weights, &mut ctx, &batch, cfg)?;
            opt.adamw_step(weights.iter_mut(), &hp)?;
            step_losses.push(loss);
            weighted += loss * batch.len() as f64;
            seen += batch.len();
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                capped = true;
                break;
            }
        }
        let pred = predict_examples(&weights, val_set)?;
        let rmse = channel_rmse(&pred, val_set)?;
        let avg = rmse.iter().sum::<f64>() / CHANNELS as f64;
        let record = EpochRecord {
            epoch,
            train_loss: weighted / seen as f64,
            val_rmse_ch1: rmse[0],
            val_rmse_ch2: rmse[1],
            val_rmse_ch3: rmse[2],
            val_rmse_ch4: rmse[3],
            val_rmse_avg: avg,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.6} val_rmse_avg {:.6}",
            record.train_loss,
            record.val_rmse_avg
        );
        history.push(record);
        let decision = stopper.observe(epoch, avg);
        if decision == StopDecision::Improved {
            best = weights.clone();
            best_meta = Some(CheckpointMeta {
                epoch,
                val_rmse: rmse,
                val_rmse_avg: avg,
                config_hash: config_hash.to_string(),
            });
        }
        if decision == StopDecision::Stop || capped {
            break 'epochs;
        }
    }
    let meta = best_meta.ok_or_else(|| Error::Contract("validation RMSE never finite".into()))?;
    Ok(TrainOutcome {
        best,
        meta,
        history,
        step_losses,
    })
}

/// One row per (sample, channel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: u64,
    pub channel: u8,
    pub y_hat: f64,
    pub y_ref: f64,
    pub lat: f64,
    pub lon: f64,
}

pub fn predict(weights: &ModelWeights, examples: &[Example]) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::with_capacity(examples.len() * CHANNELS);
    for e in examples {
        let y = model::predict(weights, &e.input)?;
        for c in 0..CHANNELS {
            out.push(PredictionRecord {
                sample_id: e.sample_id,
                channel: c as u8 + 1,
                y_hat: y[c],
                y_ref: e.target[c],
                lat: e.lat[c],
                lon: e.lon[c],
            });
        }
    }
    Ok(out)
}

pub fn write_predictions_csv(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn count_params(weights: &ModelWeights) -> usize {
    weights.count_params()
}
