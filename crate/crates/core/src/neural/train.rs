//! Mini-batch training with AdamW and a warmup-then-linear-decay learning rate.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::autograd::{Grads, Tape};
use super::{NeuralError, SequenceRegressor};
use crate::corpus::ClarificationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of all optimiser steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Decoupled (AdamW) weight decay.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm clipping threshold.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    /// Start the output bias at the training-label mean and fix the output scale at the
    /// label standard deviation, so the network itself fits standardised targets.
    pub calibrate_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            learning_rate: 5e-5,
            batch_size: 32,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_grad_norm: Some(1.0),
            seed: 0,
            calibrate_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// Number of warmup steps out of `total`.
pub fn warmup_steps(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Learning rate for the 0-based optimiser step `step`: linear from 0 to `base` over
/// `warmup` steps, then linear down to 0 at `total`.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        base * step as f64 / warmup as f64
    } else if total > warmup {
        base * (total.saturating_sub(step)) as f64 / (total - warmup) as f64
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean squared error over the epoch's training samples, in training mode.
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub steps: usize,
    pub warmup_steps: usize,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// `epoch<TAB>train_loss<TAB>dev_loss` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tdev_loss\n");
        for e in &self.epochs {
            let dev = e.dev_loss.map_or_else(|| "NA".to_string(), |d| format!("{d:.6}"));
            out.push_str(&format!("{}\t{:.6}\t{dev}\n", e.epoch, e.train_loss));
        }
        out
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

struct AdamW {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl AdamW {
    fn new<M: SequenceRegressor>(model: &M) -> Self {
        let p = model.params();
        let zeros = |i| Array2::zeros(p.value(i).dim());
        Self {
            m: (0..p.len()).map(zeros).collect(),
            v: (0..p.len()).map(zeros).collect(),
            t: 0,
        }
    }

    fn step<M: SequenceRegressor>(&mut self, model: &mut M, grads: &Grads, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let store = model.params_mut();
        for id in 0..store.len() {
            if !store.is_trainable(id) {
                continue;
            }
            let decay = if store.decays(id) { cfg.weight_decay } else { 0.0 };
            let shape = store.value(id).dim();
            let g = grads.params[id].as_ref().map(|g| g.to_dense(shape));
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            match &g {
                Some(g) => {
                    ndarray::Zip::from(&mut *m).and(g).for_each(|m, g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
                    ndarray::Zip::from(&mut *v).and(g).for_each(|v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
                }
                None => {
                    m.mapv_inplace(|x| cfg.beta1 * x);
                    v.mapv_inplace(|x| cfg.beta2 * x);
                }
            }
            ndarray::Zip::from(store.value_mut(id)).and(&*m).and(&*v).for_each(|p, m, v| {
                *p -= lr * decay * *p;
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_epsilon);
            });
        }
    }
}

fn squared_errors<M: SequenceRegressor>(model: &M, inputs: &[M::Input], y: &[f64]) -> Vec<f64> {
    inputs
        .par_iter()
        .zip(y)
        .map(|(x, t)| {
            let mut tape = Tape::new(model.params());
            let out = model.forward(&mut tape, x, None);
            (tape.value(out)[[0, 0]] - t).powi(2)
        })
        .collect()
}

/// Trains `model` on `records` with mean squared error.
///
/// Runs `epochs · ⌈N / batch_size⌉` optimiser steps. The batch order and every dropout mask
/// derive from `config.seed`; per-sample gradients are summed in batch order, so the result
/// does not depend on the thread count.
pub fn train<M: SequenceRegressor>(
    model: &mut M,
    records: &[ClarificationRecord],
    config: &TrainConfig,
    dev: Option<&[ClarificationRecord]>,
) -> Result<TrainReport, NeuralError> {
    config.validate()?;
    if records.is_empty() {
        return Err(NeuralError::EmptyTraining);
    }
    let start = Instant::now();
    let inputs = records
        .par_iter()
        .map(|r| model.prepare(r))
        .collect::<Result<Vec<_>, _>>()?;
    let y: Vec<f64> = records.iter().map(ClarificationRecord::engagement_f64).collect();
    let dev_data = match dev {
        Some(d) if !d.is_empty() => Some((
            d.par_iter().map(|r| model.prepare(r)).collect::<Result<Vec<_>, _>>()?,
            d.iter().map(ClarificationRecord::engagement_f64).collect::<Vec<f64>>(),
        )),
        _ => None,
    };
    if config.calibrate_output {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let (b, s) = (model.output_bias(), model.output_scale());
        model.params_mut().value_mut(b).fill(mean);
        model.params_mut().value_mut(s).fill(scale);
    }
    let n = inputs.len();
    let per_epoch = n.div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let warmup = warmup_steps(total, config.warmup_fraction);
    let mut opt = AdamW::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let b = batch.len() as f64;
            let results: Vec<(f64, Grads)> = {
                let model_ref = &*model;
                let inputs = &inputs;
                let y = &y;
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(pos, &i)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, step as u64, pos as u64));
                        let mut tape = Tape::new(model_ref.params());
                        let out = model_ref.forward(&mut tape, &inputs[i], Some(&mut rng));
                        let pred = tape.value(out)[[0, 0]];
                        let err = pred - y[i];
                        let grads = tape.backward(out, Array2::from_elem((1, 1), 2.0 * err / b));
                        (err * err, grads)
                    })
                    .collect()
            };
            let mut grads = Grads::new(model.params().len());
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(NeuralError::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("sample loss {loss}"),
                    });
                }
                loss_sum += loss;
                grads.merge(g);
            }
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(NeuralError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("gradient norm {norm}"),
                });
            }
            if let Some(max) = config.max_grad_norm {
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            let lr = learning_rate(step, total, warmup, config.learning_rate);
            opt.step(model, &grads, lr, config);
            if !model.params().all_finite() {
                return Err(NeuralError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
            step += 1;
        }
        let dev_loss = dev_data.as_ref().map(|(x, t)| {
            let e = squared_errors(model, x, t);
            e.iter().sum::<f64>() / e.len() as f64
        });
        let train_loss = loss_sum / n as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.5}{}", dev_loss.map_or(String::new(), |d| format!(", dev {d:.5}")));
        epochs.push(EpochReport {
            epoch,
            train_loss,
            dev_loss,
        });
    }
    Ok(TrainReport {
        epochs,
        steps: step,
        warmup_steps: warmup,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        checkpoint: None,
    })
}

/// Evaluation-mode predictions, one per record, in record order.
pub fn predict<M: SequenceRegressor>(model: &M, records: &[ClarificationRecord]) -> Result<Vec<f64>, NeuralError> {
    records
        .par_iter()
        .map(|r| {
            let x = model.prepare(r)?;
            let mut tape = Tape::new(model.params());
            let out = model.forward(&mut tape, &x, None);
            Ok(tape.value(out)[[0, 0]])
        })
        .collect()
}
