//! Node feature extraction and spectral mixing blocks.
//!
//! A volume of S slices becomes N = S / triplet_size nodes. Each node is
//! embedded into d dimensions (small strided CNN or a flat linear map),
//! learned positional embeddings are added, and L pre-norm residual
//! blocks mix nodes with a Chebyshev filter of the rescaled Laplacian
//! before mean pooling and the classification head.

mod params;

pub use params::{param_count, BlockParams, ConvParams, FeatureParams, ModelParams};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SliceGraph;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// K-term Chebyshev polynomial in the rescaled Laplacian.
    Chebyshev,
    /// One-hop baseline: X W_self + (A X) W_neigh.
    GraphConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInit {
    /// Two 3x3 stride-2 convolutions, GELU, then global average pooling.
    TinyCnn,
    /// Single linear map over the flattened triplet.
    FlattenLinear,
}

fn default_triplet_size() -> usize {
    3
}
fn default_latent_dim() -> usize {
    64
}
fn default_blocks() -> usize {
    1
}
fn default_filter_size() -> usize {
    3
}
fn default_cnn_channels() -> usize {
    8
}
fn default_true() -> bool {
    true
}
fn default_operator() -> Operator {
    Operator::Chebyshev
}
fn default_feature_init() -> FeatureInit {
    FeatureInit::FlattenLinear
}
fn default_layer_norm_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub slices: usize,
    pub slice_height: usize,
    pub slice_width: usize,
    /// Slices per node; the channel count of the node image.
    #[serde(default = "default_triplet_size")]
    pub triplet_size: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Number of mixing blocks L.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Polynomial order count K (a K-term filter reaches K-1 hops).
    #[serde(default = "default_filter_size")]
    pub filter_size: usize,
    /// Output label count M.
    pub labels: usize,
    #[serde(default = "default_operator")]
    pub operator: Operator,
    #[serde(default = "default_feature_init")]
    pub feature_init: FeatureInit,
    /// Hidden channels of the first CNN stage.
    #[serde(default = "default_cnn_channels")]
    pub cnn_channels: usize,
    #[serde(default = "default_true")]
    pub use_positional: bool,
    #[serde(default = "default_true")]
    pub use_residual: bool,
    #[serde(default = "default_true")]
    pub use_layer_norm: bool,
    #[serde(default = "default_layer_norm_eps")]
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale default: 24 slices of 32 x 32, 8 nodes, 4 labels.
    pub fn desk_default() -> Self {
        EncoderConfig {
            slices: 24,
            slice_height: 32,
            slice_width: 32,
            triplet_size: default_triplet_size(),
            latent_dim: default_latent_dim(),
            blocks: default_blocks(),
            filter_size: default_filter_size(),
            labels: 4,
            operator: default_operator(),
            feature_init: default_feature_init(),
            cnn_channels: default_cnn_channels(),
            use_positional: true,
            use_residual: true,
            use_layer_norm: true,
            layer_norm_eps: default_layer_norm_eps(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.slices / self.triplet_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplet_size == 0 {
            return Err(Error::validation("triplet size must be >= 1".to_string()));
        }
        if self.slices == 0 || self.slices % self.triplet_size != 0 {
            return Err(Error::validation(format!(
                "slice count {} is not a positive multiple of the triplet size {}",
                self.slices, self.triplet_size
            )));
        }
        if self.node_count() < 2 {
            return Err(Error::validation(format!(
                "{} slices of {} give {} node(s); need at least 2",
                self.slices,
                self.triplet_size,
                self.node_count()
            )));
        }
        if self.slice_height == 0 || self.slice_width == 0 {
            return Err(Error::validation("slice extents must be positive".to_string()));
        }
        if self.latent_dim == 0 || self.blocks == 0 || self.filter_size == 0 || self.labels == 0 {
            return Err(Error::validation(
                "latent dim, blocks, filter size, and labels must be >= 1".to_string(),
            ));
        }
        if self.feature_init == FeatureInit::TinyCnn && self.cnn_channels == 0 {
            return Err(Error::validation("cnn channels must be >= 1".to_string()));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return Err(Error::validation(format!(
                "layer norm eps {} must be >= 0",
                self.layer_norm_eps
            )));
        }
        Ok(())
    }
}

/// K-term Chebyshev filter: sum_k T_k(Lhat) X theta_k, built with the
/// three-term recurrence T_0 = I, T_1 = Lhat, T_k = 2 Lhat T_{k-1} - T_{k-2}.
/// A single term ignores the graph entirely.
pub fn cheb_conv<F: Scalar>(
    tape: &Tape<F>,
    x: &Tensor<F>,
    scaled_laplacian: &Tensor<F>,
    thetas: &[Tensor<F>],
) -> Result<Tensor<F>> {
    if thetas.is_empty() {
        return Err(Error::validation("cheb_conv: no coefficient matrices".to_string()));
    }
    if x.rank() != 2 {
        return Err(Error::dimension(format!(
            "cheb_conv: node features must be [N, d], got {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[0];
    if scaled_laplacian.shape() != [n, n] {
        return Err(Error::dimension(format!(
            "cheb_conv: operator shape {:?} for {n} nodes",
            scaled_laplacian.shape()
        )));
    }
    let mut acc = tape.matmul(x, &thetas[0])?;
    if thetas.len() == 1 {
        return Ok(acc);
    }
    let mut prev = x.clone(); // T_0 X
    let mut curr = tape.matmul(scaled_laplacian, x)?; // T_1 X
    acc = tape.add(&acc, &tape.matmul(&curr, &thetas[1])?)?;
    for theta in &thetas[2..] {
        let two = tape.scale(&tape.matmul(scaled_laplacian, &curr)?, F::from_f64(2.0))?;
        let next = tape.sub(&two, &prev)?;
        acc = tape.add(&acc, &tape.matmul(&next, theta)?)?;
        prev = curr;
        curr = next;
    }
    Ok(acc)
}

/// One-hop baseline mixing: X W_self + (A X) W_neigh.
pub fn graph_conv<F: Scalar>(
    tape: &Tape<F>,
    x: &Tensor<F>,
    adjacency: &Tensor<F>,
    w_self: &Tensor<F>,
    w_neigh: &Tensor<F>,
) -> Result<Tensor<F>> {
    if x.rank() != 2 {
        return Err(Error::dimension(format!(
            "graph_conv: node features must be [N, d], got {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[0];
    if adjacency.shape() != [n, n] {
        return Err(Error::dimension(format!(
            "graph_conv: adjacency shape {:?} for {n} nodes",
            adjacency.shape()
        )));
    }
    let own = tape.matmul(x, w_self)?;
    let mixed = tape.matmul(&tape.matmul(adjacency, x)?, w_neigh)?;
    tape.add(&own, &mixed)
}

/// Gather table turning [S, H, W] volumes into channels-last
/// [N, H, W, C] node images.
fn build_regroup(n: usize, c: usize, h: usize, w: usize) -> Arc<Vec<i64>> {
    let mut idx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    idx.push((((b * c + ch) * h + y) * w + x) as i64);
                }
            }
        }
    }
    Arc::new(idx)
}

#[derive(Debug, Clone)]
struct Im2col {
    indices: Arc<Vec<i64>>,
    out_h: usize,
    out_w: usize,
    patch: usize,
}

/// Patch-extraction table for a 3x3 stride-2 pad-1 convolution over
/// channels-last images; -1 entries are zero padding.
fn build_im2col(n: usize, h: usize, w: usize, c: usize) -> Im2col {
    const K: usize = 3;
    const STRIDE: usize = 2;
    const PAD: i64 = 1;
    let out_h = (h + 2 * PAD as usize - K) / STRIDE + 1;
    let out_w = (w + 2 * PAD as usize - K) / STRIDE + 1;
    let patch = K * K * c;
    let mut idx = Vec::with_capacity(n * out_h * out_w * patch);
    for b in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                for dy in 0..K {
                    for dx in 0..K {
                        let y = (oy * STRIDE + dy) as i64 - PAD;
                        let x = (ox * STRIDE + dx) as i64 - PAD;
                        for ch in 0..c {
                            if y < 0 || y >= h as i64 || x < 0 || x >= w as i64 {
                                idx.push(-1);
                            } else {
                                let flat = ((b as i64 * h as i64 + y) * w as i64 + x) * c as i64
                                    + ch as i64;
                                idx.push(flat);
                            }
                        }
                    }
                }
            }
        }
    }
    Im2col {
        indices: Arc::new(idx),
        out_h,
        out_w,
        patch,
    }
}

/// Per-block constant graph operators in model precision.
#[derive(Debug, Clone)]
pub struct GraphOperators<F: Scalar> {
    pub scaled_laplacian: Tensor<F>,
    pub adjacency: Tensor<F>,
}

/// Precomputed constants for running the encoder: graph operators per
/// block and index tables for the feature extractor.
#[derive(Debug, Clone)]
pub struct ModelContext<F: Scalar> {
    pub cfg: EncoderConfig,
    block_ops: Vec<GraphOperators<F>>,
    regroup: Option<Arc<Vec<i64>>>,
    im2col1: Option<Im2col>,
    im2col2: Option<Im2col>,
}

impl<F: Scalar> ModelContext<F> {
    /// `graphs` holds either one graph shared by every block or one per
    /// block. Node counts must match the config.
    pub fn new(cfg: &EncoderConfig, graphs: &[&SliceGraph]) -> Result<Self> {
        cfg.validate()?;
        if graphs.is_empty() || (graphs.len() != 1 && graphs.len() != cfg.blocks) {
            return Err(Error::validation(format!(
                "{} graphs supplied for {} blocks; need 1 or {}",
                graphs.len(),
                cfg.blocks,
                cfg.blocks
            )));
        }
        for g in graphs {
            if g.node_count() != cfg.node_count() {
                return Err(Error::dimension(format!(
                    "graph has {} nodes, encoder expects {}",
                    g.node_count(),
                    cfg.node_count()
                )));
            }
        }
        let mut block_ops = Vec::with_capacity(cfg.blocks);
        for l in 0..cfg.blocks {
            let g = if graphs.len() == 1 { graphs[0] } else { graphs[l] };
            block_ops.push(GraphOperators {
                scaled_laplacian: g.scaled_laplacian_tensor::<F>(),
                adjacency: g.adjacency_tensor::<F>(),
            });
        }
        let (regroup, im2col1, im2col2) = match cfg.feature_init {
            FeatureInit::TinyCnn => {
                let (n, c, h, w) = (
                    cfg.node_count(),
                    cfg.triplet_size,
                    cfg.slice_height,
                    cfg.slice_width,
                );
                let stage1 = build_im2col(n, h, w, c);
                let stage2 = build_im2col(n, stage1.out_h, stage1.out_w, cfg.cnn_channels);
                (Some(build_regroup(n, c, h, w)), Some(stage1), Some(stage2))
            }
            FeatureInit::FlattenLinear => (None, None, None),
        };
        Ok(ModelContext {
            cfg: cfg.clone(),
            block_ops,
            regroup,
            im2col1,
            im2col2,
        })
    }

    pub fn operators(&self, block: usize) -> &GraphOperators<F> {
        &self.block_ops[block]
    }

    fn check_volume(&self, volume: &Tensor<F>) -> Result<()> {
        let want = [
            self.cfg.slices,
            self.cfg.slice_height,
            self.cfg.slice_width,
        ];
        if volume.shape() != want {
            return Err(Error::dimension(format!(
                "volume shape {:?}, encoder expects {:?}",
                volume.shape(),
                want
            )));
        }
        Ok(())
    }

    /// One strided conv stage: im2col gather, matmul, bias, reshape.
    fn conv_stage(
        &self,
        tape: &Tape<F>,
        x: &Tensor<F>,
        table: &Im2col,
        n: usize,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let rows = n * table.out_h * table.out_w;
        let patches = tape.gather(x, &table.indices, vec![rows, table.patch])?;
        let mixed = tape.matmul(&patches, weight)?;
        let biased = tape.add_bias(&mixed, bias)?;
        tape.reshape(&biased, vec![n, table.out_h, table.out_w, weight.shape()[1]])
    }

    /// Per-node embeddings [N, d] from a raw volume [S, H, W].
    pub fn init_features(
        &self,
        tape: &Tape<F>,
        volume: &Tensor<F>,
        params: &ModelParams<F>,
    ) -> Result<Tensor<F>> {
        self.check_volume(volume)?;
        let n = self.cfg.node_count();
        match (&self.cfg.feature_init, &params.feature) {
            (FeatureInit::FlattenLinear, FeatureParams::Flatten { weight, bias }) => {
                let input = self.cfg.triplet_size * self.cfg.slice_height * self.cfg.slice_width;
                let flat = tape.reshape(volume, vec![n, input])?;
                let mixed = tape.matmul(&flat, weight)?;
                tape.add_bias(&mixed, bias)
            }
            (FeatureInit::TinyCnn, FeatureParams::TinyCnn {
                conv1_weight,
                conv1_bias,
                conv2_weight,
                conv2_bias,
            }) => {
                let regroup = self.regroup.as_ref().expect("built for tiny_cnn");
                let t1 = self.im2col1.as_ref().expect("built for tiny_cnn");
                let t2 = self.im2col2.as_ref().expect("built for tiny_cnn");
                let (c, h, w) = (
                    self.cfg.triplet_size,
                    self.cfg.slice_height,
                    self.cfg.slice_width,
                );
                let images = tape.gather(volume, regroup, vec![n, h, w, c])?;
                let s1 = self.conv_stage(tape, &images, t1, n, conv1_weight, conv1_bias)?;
                let s1 = tape.gelu(&s1)?;
                let s2 = self.conv_stage(tape, &s1, t2, n, conv2_weight, conv2_bias)?;
                let s2 = tape.gelu(&s2)?;
                // Global average pool over both spatial axes.
                let pooled_h = tape.mean_axis(&s2, 1)?;
                tape.mean_axis(&pooled_h, 1)
            }
            _ => Err(Error::validation(
                "feature parameters do not match the configured extractor".to_string(),
            )),
        }
    }

    /// One pre-norm residual block.
    pub fn spectral_block(
        &self,
        tape: &Tape<F>,
        h: &Tensor<F>,
        block: usize,
        bp: &BlockParams<F>,
    ) -> Result<Tensor<F>> {
        if block >= self.block_ops.len() {
            return Err(Error::index(format!(
                "block {block} of {}",
                self.block_ops.len()
            )));
        }
        let eps = self.cfg.layer_norm_eps;
        let ops = &self.block_ops[block];
        let pre = if self.cfg.use_layer_norm {
            tape.layer_norm(h, &bp.norm1_gamma, &bp.norm1_beta, eps)?
        } else {
            h.clone()
        };
        let conv = match &bp.conv {
            ConvParams::Chebyshev(thetas) => {
                cheb_conv(tape, &pre, &ops.scaled_laplacian, thetas)?
            }
            ConvParams::GraphConv { w_self, w_neigh } => {
                graph_conv(tape, &pre, &ops.adjacency, w_self, w_neigh)?
            }
        };
        let z = if self.cfg.use_residual {
            tape.add(h, &conv)?
        } else {
            conv
        };
        let pre2 = if self.cfg.use_layer_norm {
            tape.layer_norm(&z, &bp.norm2_gamma, &bp.norm2_beta, eps)?
        } else {
            z.clone()
        };
        let ffn = tape.gelu(&tape.linear(&pre2, &bp.ffn_weight, &bp.ffn_bias)?)?;
        if self.cfg.use_residual {
            tape.add(&z, &ffn)
        } else {
            Ok(ffn)
        }
    }

    /// Full pipeline: volume [S, H, W] to logits [M].
    pub fn encode(
        &self,
        tape: &Tape<F>,
        volume: &Tensor<F>,
        params: &ModelParams<F>,
    ) -> Result<Tensor<F>> {
        if params.blocks.len() != self.cfg.blocks {
            return Err(Error::validation(format!(
                "parameters hold {} blocks, config expects {}",
                params.blocks.len(),
                self.cfg.blocks
            )));
        }
        let features = self.init_features(tape, volume, params)?;
        let mut h = match (&params.positional, self.cfg.use_positional) {
            (Some(pos), true) => tape.add(&features, pos)?,
            (None, false) => features,
            _ => {
                return Err(Error::validation(
                    "positional embedding presence does not match the config".to_string(),
                ))
            }
        };
        for (l, bp) in params.blocks.iter().enumerate() {
            h = self.spectral_block(tape, &h, l, bp)?;
        }
        let pooled = tape.mean_axis(&h, 0)?;
        tape.linear(&pooled, &params.head_weight, &params.head_bias)
    }

    /// Inference helper: label probabilities for one volume, in f64.
    pub fn predict_probs(&self, volume: &Tensor<F>, params: &ModelParams<F>) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let detached = params.detached();
        let logits = self.encode(&tape, volume, &detached)?;
        Ok(logits
            .data()
            .iter()
            .map(|&v| crate::scalar::sigmoid(v.to_f64()))
            .collect())
    }
}
