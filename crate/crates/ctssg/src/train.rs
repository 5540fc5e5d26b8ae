//! Mini-batch training loop with validation checkpointing.
//!
//! Each sample in a batch runs forward and backward on its own tape
//! (tapes are thread-confined), in parallel via rayon; the per-sample
//! gradients are then averaged sequentially in batch order, so results
//! are bit-identical regardless of thread count. The batch schedule is
//! derived purely from the global step number: epoch e is a seeded
//! shuffle of the training indices, and step t picks batch
//! (t-1) mod batches_per_epoch of epoch (t-1) div batches_per_epoch.
//! Resuming from step t therefore continues the exact run.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, ModelContext, ModelParams};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::synth::{SynthConfig, SyntheticVolume};
use crate::tensor::{GradStore, Tape, Tensor};
use crate::util::{mix_seed, rng_for};

const STREAM_SHUFFLE: u64 = 0x51;

fn default_lr() -> f64 {
    2e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    4
}
fn default_warmup() -> usize {
    100
}
fn default_max_steps() -> usize {
    2000
}
fn default_eval_every() -> usize {
    100
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Steps of linear learning-rate ramp from zero.
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Validation cadence in steps; a final evaluation always runs.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability cutoff used for F1 and accuracy on validation.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size: default_batch(),
            warmup_steps: default_warmup(),
            max_steps: default_max_steps(),
            eval_every: default_eval_every(),
            seed: 0,
            threshold: default_threshold(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return Err(Error::validation(
                "batch size, max steps, and eval cadence must be positive".to_string(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::validation(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// One training example: a volume and its multi-hot label targets.
#[derive(Debug, Clone)]
pub struct TrainSample<F: Scalar> {
    pub volume: Tensor<F>,
    pub targets: Tensor<F>,
}

impl<F: Scalar> TrainSample<F> {
    pub fn new(volume: Tensor<F>, targets: Tensor<F>) -> Result<Self> {
        if volume.rank() != 3 {
            return Err(Error::dimension(format!(
                "volume must be [slices, height, width], got {:?}",
                volume.shape()
            )));
        }
        if targets.rank() != 1 {
            return Err(Error::dimension(format!(
                "targets must be a label vector, got {:?}",
                targets.shape()
            )));
        }
        Ok(TrainSample { volume, targets })
    }

    /// Builds a sample from a synthetic volume, checking that the
    /// generator and encoder agree on dimensions.
    pub fn from_volume(
        enc: &EncoderConfig,
        synth: &SynthConfig,
        vol: &SyntheticVolume,
    ) -> Result<Self> {
        if enc.slices != synth.slices
            || enc.slice_height != synth.slice_height
            || enc.slice_width != synth.slice_width
            || enc.triplet_size != synth.triplet_size
        {
            return Err(Error::validation(format!(
                "encoder expects {}x{}x{} (triplet {}), generator makes {}x{}x{} (triplet {})",
                enc.slices,
                enc.slice_height,
                enc.slice_width,
                enc.triplet_size,
                synth.slices,
                synth.slice_height,
                synth.slice_width,
                synth.triplet_size
            )));
        }
        if enc.labels != synth.labels.len() {
            return Err(Error::validation(format!(
                "encoder has {} labels, generator defines {}",
                enc.labels,
                synth.labels.len()
            )));
        }
        let volume = vol.to_tensor::<F>(synth)?;
        let targets = Tensor::new(
            vec![enc.labels],
            vol.labels.iter().map(|&v| F::from_f64(v as f64)).collect(),
        )?;
        Self::new(volume, targets)
    }
}

/// Validation snapshot plus the mean training loss since the previous one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub train_loss: f64,
    pub learning_rate: f64,
    pub macro_f1: f64,
    pub macro_auroc: f64,
    pub macro_average_precision: f64,
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Scalar> {
    /// Parameters at the best validation macro-F1 (final parameters
    /// when no validation set was given).
    pub best_params: ModelParams<F>,
    pub best_step: usize,
    pub best_macro_f1: Option<f64>,
    pub history: Vec<HistoryRow>,
    /// Global step count after this call (includes resumed steps).
    pub steps_run: usize,
}

/// Deterministic batch of example indices for a global 1-based step.
fn batch_for_step(seed: u64, len: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let batches_per_epoch = len.div_ceil(batch_size);
    let epoch = (step - 1) / batches_per_epoch;
    let slot = (step - 1) % batches_per_epoch;
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = rng_for(seed, mix_seed(epoch as u64, STREAM_SHUFFLE));
    order.shuffle(&mut rng);
    let lo = slot * batch_size;
    let hi = (lo + batch_size).min(len);
    order[lo..hi].to_vec()
}

/// Mean loss and parameter gradients over a batch. Per-sample passes
/// run in parallel; accumulation is sequential in batch order.
fn batch_gradients<F: Scalar>(
    ctx: &ModelContext<F>,
    params: &ModelParams<F>,
    samples: &[TrainSample<F>],
    batch: &[usize],
    step: usize,
) -> Result<(GradStore<F>, f64)> {
    let per_sample: Vec<(GradStore<F>, f64)> = batch
        .par_iter()
        .map(|&idx| {
            let sample = &samples[idx];
            let tape = Tape::new();
            let logits = ctx.encode(&tape, &sample.volume, params)?;
            let loss = tape.bce_with_logits(&logits, &sample.targets)?;
            let value = loss.scalar_value()?.to_f64();
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "loss diverged at step {step} (example {idx})"
                )));
            }
            let grads = tape.backward(&loss)?;
            Ok((grads, value))
        })
        .collect::<Result<_>>()?;

    let scale = F::from_f64(1.0 / batch.len() as f64);
    let mut merged = GradStore::new();
    let mut loss_sum = 0.0;
    for (grads, value) in &per_sample {
        loss_sum += value;
        for (_, tensor) in params.named() {
            if let Some(g) = grads.grad_slice(tensor) {
                let buf = merged.accum(tensor.id(), tensor.len());
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b += x * scale;
                }
            }
        }
    }
    Ok((merged, loss_sum / batch.len() as f64))
}

/// Label probabilities and metrics over a sample set.
pub fn evaluate_model<F: Scalar>(
    ctx: &ModelContext<F>,
    params: &ModelParams<F>,
    samples: &[TrainSample<F>],
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::validation("evaluation set is empty".to_string()));
    }
    let labels = samples[0].targets.len();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = samples
        .par_iter()
        .map(|s| {
            let probs = ctx.predict_probs(&s.volume, params)?;
            Ok((probs, s.targets.to_f64_vec()))
        })
        .collect::<Result<_>>()?;
    let mut probs = Vec::with_capacity(samples.len() * labels);
    let mut targets = Vec::with_capacity(samples.len() * labels);
    for (p, t) in rows {
        probs.extend(p);
        targets.extend(t);
    }
    metrics::evaluate(&probs, &targets, samples.len(), labels, threshold)
}

/// Runs Adam from the optimizer's current step up to `max_steps`,
/// evaluating every `eval_every` steps and keeping the parameters with
/// the best validation macro-F1 (earliest step wins ties).
pub fn train<F: Scalar>(
    ctx: &ModelContext<F>,
    params: &mut ModelParams<F>,
    opt: &mut AdamState,
    train_set: &[TrainSample<F>],
    val_set: &[TrainSample<F>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty".to_string()));
    }
    if opt.step >= cfg.max_steps {
        return Err(Error::validation(format!(
            "optimizer already at step {}, max_steps is {}",
            opt.step, cfg.max_steps
        )));
    }
    let adam_cfg = cfg.adam();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<F>)> = None;
    let mut window_loss = 0.0;
    let mut window_count = 0usize;

    while opt.step < cfg.max_steps {
        let step = opt.step + 1;
        let batch = batch_for_step(cfg.seed, train_set.len(), cfg.batch_size, step);
        let (grads, loss) = batch_gradients(ctx, params, train_set, &batch, step)?;
        adam_step(params, &grads, opt, &adam_cfg)?;
        window_loss += loss;
        window_count += 1;

        let due = step % cfg.eval_every == 0 || step == cfg.max_steps;
        if due && !val_set.is_empty() {
            let report = evaluate_model(ctx, params, val_set, cfg.threshold)?;
            history.push(HistoryRow {
                step,
                train_loss: window_loss / window_count as f64,
                learning_rate: cfg.learning_rate * adam_cfg.warmup_factor(step),
                macro_f1: report.macro_f1,
                macro_auroc: report.macro_auroc,
                macro_average_precision: report.macro_average_precision,
                macro_accuracy: report.macro_accuracy,
            });
            window_loss = 0.0;
            window_count = 0;
            let improved = best
                .as_ref()
                .map(|(f1, _, _)| report.macro_f1 > *f1)
                .unwrap_or(true);
            if improved {
                best = Some((report.macro_f1, step, params.clone()));
            }
        }
    }

    let steps_run = opt.step;
    Ok(match best {
        Some((f1, step, p)) => TrainOutcome {
            best_params: p,
            best_step: step,
            best_macro_f1: Some(f1),
            history,
            steps_run,
        },
        None => TrainOutcome {
            best_params: params.clone(),
            best_step: steps_run,
            best_macro_f1: None,
            history,
            steps_run,
        },
    })
}
