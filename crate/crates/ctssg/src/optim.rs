//! Adam with linear learning-rate warmup.
//!
//! Moment buffers are keyed by parameter name so they survive the tensor
//! id changes that each update causes, and so checkpoints can restore
//! them for exact training resumption.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::GradStore;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from 0.
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            warmup_steps: 10_000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation(format!("eps {} must be > 0", self.eps)));
        }
        Ok(())
    }

    /// Linear warmup multiplier for a 1-based step index.
    pub fn warmup_factor(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: HashMap<String, Vec<f64>>,
    pub v: HashMap<String, Vec<f64>>,
    /// Completed optimizer steps.
    pub step: usize,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update from gradients keyed by the current tensor ids.
/// Parameters with no gradient entry are treated as zero-gradient.
/// Non-finite gradients abort with the failing parameter named.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &GradStore<F>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    state.step += 1;
    let t = state.step;
    let lr = cfg.learning_rate * cfg.warmup_factor(t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    for (name, tensor) in params.named_mut() {
        let n = tensor.len();
        let grad: Vec<f64> = match grads.grad_slice(tensor) {
            Some(buf) => buf.iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; n],
        };
        for (i, g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for {name}[{i}] at step {t}"
                )));
            }
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n || v.len() != n {
            return Err(Error::validation(format!(
                "optimizer state for {name} has wrong length"
            )));
        }
        let mut data: Vec<F> = tensor.data().to_vec();
        for i in 0..n {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let delta = lr * mhat / (vhat.sqrt() + cfg.eps);
            data[i] = F::from_f64(data[i].to_f64() - delta);
        }
        *tensor = tensor.with_data(data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::tensor::Tape;

    fn tiny_params() -> (EncoderConfig, ModelParams<f64>) {
        let mut cfg = EncoderConfig::desk_default();
        cfg.slices = 6;
        cfg.slice_height = 4;
        cfg.slice_width = 4;
        cfg.latent_dim = 4;
        cfg.labels = 2;
        let p = ModelParams::init(&cfg, 1).unwrap();
        (cfg, p)
    }

    fn fake_grads(params: &ModelParams<f64>, value: f64) -> GradStore<f64> {
        // Exercise the optimizer through a real backward pass: the loss
        // sum(v * p) has gradient v for every parameter element.
        let tape = Tape::new();
        let mut total: Option<crate::tensor::Tensor<f64>> = None;
        for (_, t) in params.named() {
            let flat = tape.reshape(t, vec![t.len()]).unwrap();
            let c = crate::tensor::Tensor::new(vec![t.len()], vec![value; t.len()]).unwrap();
            let term = tape.sum_all(&tape.mul(&flat, &c).unwrap()).unwrap();
            total = Some(match total {
                Some(acc) => tape.add(&acc, &term).unwrap(),
                None => term,
            });
        }
        tape.backward(&total.unwrap()).unwrap()
    }

    #[test]
    fn warmup_ramp_is_linear_then_flat() {
        let cfg = AdamConfig {
            warmup_steps: 100,
            ..Default::default()
        };
        assert_eq!(cfg.warmup_factor(1), 0.01);
        assert_eq!(cfg.warmup_factor(50), 0.5);
        assert_eq!(cfg.warmup_factor(100), 1.0);
        assert_eq!(cfg.warmup_factor(5000), 1.0);
        let no_warmup = AdamConfig {
            warmup_steps: 0,
            ..Default::default()
        };
        assert_eq!(no_warmup.warmup_factor(1), 1.0);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let (_, mut params) = tiny_params();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            warmup_steps: 0,
            ..Default::default()
        };
        let before = params.head_bias.data().to_vec();
        let grads = fake_grads(&params, 0.5);
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // With zero state: m = 0.1*g/... full bias correction makes
        // mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
        let g: f64 = 0.5;
        let want = before[0] - 0.1 * g / (g.abs() + 1e-8);
        assert!((params.head_bias.data()[0] - want).abs() < 1e-12);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_bit_exact_identity() {
        let (_, mut params) = tiny_params();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let before: Vec<(String, Vec<u64>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut state = AdamState::new();
        for _ in 0..3 {
            let grads = fake_grads(&params, -0.25);
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        for ((name, bits), (_, t)) in before.iter().zip(params.named()) {
            let after: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(*bits, after, "parameter {name} changed under lr = 0");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_step() {
        let (_, mut params) = tiny_params();
        // Finite loss with an overflowing gradient: for bias p = 0,
        // sum((p * a) * b) is 0, but dL/dp = a * b overflows.
        let tape = Tape::new();
        let t = params.head_bias.clone();
        let a = crate::tensor::Tensor::new(vec![t.len()], vec![1e200; t.len()]).unwrap();
        let b = crate::tensor::Tensor::new(vec![t.len()], vec![1e200; t.len()]).unwrap();
        let pa = tape.mul(&t, &a).unwrap();
        let pab = tape.mul(&pa, &b).unwrap();
        let loss = tape.sum_all(&pab).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads
            .grad(&t)
            .unwrap()
            .data()
            .iter()
            .any(|v| !v.is_finite()));
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        match err {
            Err(crate::error::Error::Numeric(msg)) => {
                assert!(msg.contains("step 1"), "message: {msg}");
            }
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let (_, mut params) = tiny_params();
            let cfg = AdamConfig {
                learning_rate: 1e-2,
                warmup_steps: 5,
                ..Default::default()
            };
            let mut state = AdamState::new();
            for i in 0..4 {
                let grads = fake_grads(&params, 0.1 * (i + 1) as f64);
                adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            }
            params
                .named()
                .into_iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}
