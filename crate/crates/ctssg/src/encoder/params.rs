//! Model parameters: initialization, canonical naming, counting.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::{EncoderConfig, FeatureInit, Operator};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::rng_for_name;

const POSITIONAL_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub enum FeatureParams<F: Scalar> {
    Flatten {
        weight: Tensor<F>,
        bias: Tensor<F>,
    },
    TinyCnn {
        conv1_weight: Tensor<F>,
        conv1_bias: Tensor<F>,
        conv2_weight: Tensor<F>,
        conv2_bias: Tensor<F>,
    },
}

#[derive(Debug, Clone)]
pub enum ConvParams<F: Scalar> {
    /// One [d x d] coefficient matrix per polynomial order.
    Chebyshev(Vec<Tensor<F>>),
    /// Self and neighbor mixing matrices for the one-hop baseline.
    GraphConv {
        w_self: Tensor<F>,
        w_neigh: Tensor<F>,
    },
}

#[derive(Debug, Clone)]
pub struct BlockParams<F: Scalar> {
    pub norm1_gamma: Tensor<F>,
    pub norm1_beta: Tensor<F>,
    pub conv: ConvParams<F>,
    pub norm2_gamma: Tensor<F>,
    pub norm2_beta: Tensor<F>,
    pub ffn_weight: Tensor<F>,
    pub ffn_bias: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct ModelParams<F: Scalar> {
    pub feature: FeatureParams<F>,
    pub positional: Option<Tensor<F>>,
    pub blocks: Vec<BlockParams<F>>,
    pub head_weight: Tensor<F>,
    pub head_bias: Tensor<F>,
}

/// Init rule keyed by the canonical name: affine-norm gains start at one,
/// biases and shifts at zero, positional embeddings from N(0, 0.02), and
/// weight matrices uniform in +-1/sqrt(fan_in). Every parameter draws from
/// its own RNG stream, so adding a parameter does not shift the others.
fn init_tensor<F: Scalar>(seed: u64, name: &str, shape: Vec<usize>) -> Result<Tensor<F>> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = if name.ends_with(".gamma") {
        vec![F::ONE; n]
    } else if name.ends_with(".beta") || name.ends_with(".bias") {
        vec![F::ZERO; n]
    } else if name == "positional" {
        let mut rng = rng_for_name(seed, name);
        let normal = Normal::new(0.0, POSITIONAL_STD)
            .map_err(|e| Error::validation(format!("positional init: {e}")))?;
        (0..n)
            .map(|_| F::from_f64(normal.sample(&mut rng)))
            .collect()
    } else {
        let fan_in = shape[0] as f64;
        let bound = 1.0 / fan_in.sqrt();
        let mut rng = rng_for_name(seed, name);
        (0..n)
            .map(|_| F::from_f64(bound * (2.0 * rng.random::<f64>() - 1.0)))
            .collect()
    };
    Tensor::param(shape, data)
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let feature = match cfg.feature_init {
            FeatureInit::FlattenLinear => {
                let input = cfg.triplet_size * cfg.slice_height * cfg.slice_width;
                FeatureParams::Flatten {
                    weight: init_tensor(seed, "feature.weight", vec![input, d])?,
                    bias: init_tensor(seed, "feature.bias", vec![d])?,
                }
            }
            FeatureInit::TinyCnn => {
                let ch = cfg.cnn_channels;
                FeatureParams::TinyCnn {
                    conv1_weight: init_tensor(
                        seed,
                        "feature.conv1.weight",
                        vec![9 * cfg.triplet_size, ch],
                    )?,
                    conv1_bias: init_tensor(seed, "feature.conv1.bias", vec![ch])?,
                    conv2_weight: init_tensor(seed, "feature.conv2.weight", vec![9 * ch, d])?,
                    conv2_bias: init_tensor(seed, "feature.conv2.bias", vec![d])?,
                }
            }
        };
        let positional = if cfg.use_positional {
            Some(init_tensor(seed, "positional", vec![cfg.node_count(), d])?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for l in 0..cfg.blocks {
            let conv = match cfg.operator {
                Operator::Chebyshev => {
                    let mut thetas = Vec::with_capacity(cfg.filter_size);
                    for k in 0..cfg.filter_size {
                        thetas.push(init_tensor(
                            seed,
                            &format!("block{l}.theta{k}"),
                            vec![d, d],
                        )?);
                    }
                    ConvParams::Chebyshev(thetas)
                }
                Operator::GraphConv => ConvParams::GraphConv {
                    w_self: init_tensor(seed, &format!("block{l}.w_self"), vec![d, d])?,
                    w_neigh: init_tensor(seed, &format!("block{l}.w_neigh"), vec![d, d])?,
                },
            };
            blocks.push(BlockParams {
                norm1_gamma: init_tensor(seed, &format!("block{l}.norm1.gamma"), vec![d])?,
                norm1_beta: init_tensor(seed, &format!("block{l}.norm1.beta"), vec![d])?,
                conv,
                norm2_gamma: init_tensor(seed, &format!("block{l}.norm2.gamma"), vec![d])?,
                norm2_beta: init_tensor(seed, &format!("block{l}.norm2.beta"), vec![d])?,
                ffn_weight: init_tensor(seed, &format!("block{l}.ffn.weight"), vec![d, d])?,
                ffn_bias: init_tensor(seed, &format!("block{l}.ffn.bias"), vec![d])?,
            });
        }
        Ok(ModelParams {
            feature,
            positional,
            blocks,
            head_weight: init_tensor(seed, "head.weight", vec![d, cfg.labels])?,
            head_bias: init_tensor(seed, "head.bias", vec![cfg.labels])?,
        })
    }

    /// Canonical (name, tensor) listing; the order defines the checkpoint
    /// layout.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        match &self.feature {
            FeatureParams::Flatten { weight, bias } => {
                out.push(("feature.weight".to_string(), weight));
                out.push(("feature.bias".to_string(), bias));
            }
            FeatureParams::TinyCnn {
                conv1_weight,
                conv1_bias,
                conv2_weight,
                conv2_bias,
            } => {
                out.push(("feature.conv1.weight".to_string(), conv1_weight));
                out.push(("feature.conv1.bias".to_string(), conv1_bias));
                out.push(("feature.conv2.weight".to_string(), conv2_weight));
                out.push(("feature.conv2.bias".to_string(), conv2_bias));
            }
        }
        if let Some(p) = &self.positional {
            out.push(("positional".to_string(), p));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}.norm1.gamma"), &b.norm1_gamma));
            out.push((format!("block{l}.norm1.beta"), &b.norm1_beta));
            match &b.conv {
                ConvParams::Chebyshev(thetas) => {
                    for (k, t) in thetas.iter().enumerate() {
                        out.push((format!("block{l}.theta{k}"), t));
                    }
                }
                ConvParams::GraphConv { w_self, w_neigh } => {
                    out.push((format!("block{l}.w_self"), w_self));
                    out.push((format!("block{l}.w_neigh"), w_neigh));
                }
            }
            out.push((format!("block{l}.norm2.gamma"), &b.norm2_gamma));
            out.push((format!("block{l}.norm2.beta"), &b.norm2_beta));
            out.push((format!("block{l}.ffn.weight"), &b.ffn_weight));
            out.push((format!("block{l}.ffn.bias"), &b.ffn_bias));
        }
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    /// Same listing with mutable tensors, for the optimizer.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = Vec::new();
        match &mut self.feature {
            FeatureParams::Flatten { weight, bias } => {
                out.push(("feature.weight".to_string(), weight));
                out.push(("feature.bias".to_string(), bias));
            }
            FeatureParams::TinyCnn {
                conv1_weight,
                conv1_bias,
                conv2_weight,
                conv2_bias,
            } => {
                out.push(("feature.conv1.weight".to_string(), conv1_weight));
                out.push(("feature.conv1.bias".to_string(), conv1_bias));
                out.push(("feature.conv2.weight".to_string(), conv2_weight));
                out.push(("feature.conv2.bias".to_string(), conv2_bias));
            }
        }
        if let Some(p) = &mut self.positional {
            out.push(("positional".to_string(), p));
        }
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{l}.norm1.gamma"), &mut b.norm1_gamma));
            out.push((format!("block{l}.norm1.beta"), &mut b.norm1_beta));
            match &mut b.conv {
                ConvParams::Chebyshev(thetas) => {
                    for (k, t) in thetas.iter_mut().enumerate() {
                        out.push((format!("block{l}.theta{k}"), t));
                    }
                }
                ConvParams::GraphConv { w_self, w_neigh } => {
                    out.push((format!("block{l}.w_self"), w_self));
                    out.push((format!("block{l}.w_neigh"), w_neigh));
                }
            }
            out.push((format!("block{l}.norm2.gamma"), &mut b.norm2_gamma));
            out.push((format!("block{l}.norm2.beta"), &mut b.norm2_beta));
            out.push((format!("block{l}.ffn.weight"), &mut b.ffn_weight));
            out.push((format!("block{l}.ffn.bias"), &mut b.ffn_bias));
        }
        out.push(("head.weight".to_string(), &mut self.head_weight));
        out.push(("head.bias".to_string(), &mut self.head_bias));
        out
    }

    /// Rebuilds the structure from named tensors (checkpoint load).
    /// Requires exactly the parameter set implied by `cfg`, with matching
    /// shapes.
    pub fn from_named(cfg: &EncoderConfig, tensors: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let template = Self::init(cfg, 0)?;
        let expected = template.named();
        let mut map: std::collections::HashMap<String, Tensor<F>> = tensors.into_iter().collect();
        let mut fetched = Vec::with_capacity(expected.len());
        for (name, t) in &expected {
            let got = map.remove(name).ok_or_else(|| {
                Error::load(format!("checkpoint is missing parameter {name}"))
            })?;
            if got.shape() != t.shape() {
                return Err(Error::load(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
            fetched.push((name.clone(), got));
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::load(format!(
                "checkpoint holds unexpected parameter {extra}"
            )));
        }
        let mut out = template;
        let mut it = fetched.into_iter();
        for (_, slot) in out.named_mut() {
            let (_, t) = it.next().expect("lengths match by construction");
            *slot = t;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copy with tensors replaced positionally (canonical order); shapes
    /// must match. Used by the finite-difference checker to re-evaluate
    /// the model at perturbed parameters without re-sampling.
    pub fn with_tensors(&self, tensors: &[Tensor<F>]) -> Result<Self> {
        let mut out = self.clone();
        let slots = out.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::validation(format!(
                "{} tensors supplied for {} parameters",
                tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::dimension(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(out)
    }

    /// Copy whose tensors share buffers but no longer require gradients;
    /// forward passes over it record nothing on the tape.
    pub fn detached(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_mut() {
            *t = t.detached();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }
}

/// Parameter count implied by a config without building tensors.
pub fn param_count(cfg: &EncoderConfig) -> Result<usize> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let feature = match cfg.feature_init {
        FeatureInit::FlattenLinear => {
            cfg.triplet_size * cfg.slice_height * cfg.slice_width * d + d
        }
        FeatureInit::TinyCnn => {
            let ch = cfg.cnn_channels;
            9 * cfg.triplet_size * ch + ch + 9 * ch * d + d
        }
    };
    let positional = if cfg.use_positional {
        cfg.node_count() * d
    } else {
        0
    };
    let conv = match cfg.operator {
        Operator::Chebyshev => cfg.filter_size * d * d,
        Operator::GraphConv => 2 * d * d,
    };
    let per_block = 2 * d + conv + 2 * d + d * d + d;
    let head = d * cfg.labels + cfg.labels;
    Ok(feature + positional + cfg.blocks * per_block + head)
}
