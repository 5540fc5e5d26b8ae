//! Experiment orchestration: resolved configurations, hash-gated
//! checkpoints, and the train / eval / ablation / robustness runners
//! behind the CLI.
//!
//! Every artifact is a pure function of (config, seed): JSON is written
//! with a fixed field order, CSV floats use shortest-roundtrip
//! formatting, and nothing records wall-clock time, so rerunning a
//! command reproduces its output files byte for byte.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::read_dataset;
use crate::encoder::{param_count, EncoderConfig, ModelContext, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphConfig, SliceGraph, Topology, WeightScheme};
use crate::metrics::MetricsReport;
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::synth::{add_noise, generate, z_translate, SynthConfig, SyntheticVolume};
use crate::tensor::{load_named, save_named, ParamManifest, Tensor};
use crate::train::{evaluate_model, train, TrainConfig, TrainOutcome, TrainSample};
use crate::util::mix_seed;

/// Column layout of `history.csv`.
pub const HISTORY_HEADER: &str = "step,train_loss,val_macro_f1,val_auroc,val_map,val_accuracy,lr";
/// Column layout of `robustness_*.csv`.
pub const ROBUSTNESS_HEADER: &str = "perturbation,macro_f1,auroc";
/// Column layout of `ablate_*.csv`.
pub const ABLATION_HEADER: &str = "axis_value,seed,macro_f1,auroc,map,accuracy";

/// Documented z-shift range for the robustness protocol, in slices.
pub const ZSHIFT_LIMIT: f64 = 30.0;
/// Documented Gaussian-noise sigma range for the robustness protocol.
pub const NOISE_SIGMA_RANGE: (f64, f64) = (0.01, 0.07);

const STREAM_ROBUSTNESS_NOISE: u64 = 0x0b57;

/// Receptive field, either shared by all blocks or listed per block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReceptiveField {
    Shared(usize),
    PerLayer(Vec<usize>),
}

impl ReceptiveField {
    /// One receptive field per block.
    pub fn per_layer(&self, blocks: usize) -> Result<Vec<usize>> {
        match self {
            ReceptiveField::Shared(q) => Ok(vec![*q; blocks]),
            ReceptiveField::PerLayer(qs) => {
                if qs.len() != blocks {
                    return Err(Error::validation(format!(
                        "{} receptive fields listed for {} blocks",
                        qs.len(),
                        blocks
                    )));
                }
                Ok(qs.clone())
            }
        }
    }
}

fn default_spacing_mm() -> f64 {
    0.75
}
fn default_distance_factor() -> f64 {
    3.0
}
fn default_topology() -> Topology {
    Topology::Banded
}
fn default_weight_scheme() -> WeightScheme {
    WeightScheme::Distance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub receptive_field: ReceptiveField,
    /// Physical slice spacing in millimeters; converted to decimeters
    /// for edge weights.
    #[serde(default = "default_spacing_mm")]
    pub spacing_mm: f64,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "default_weight_scheme")]
    pub weight_scheme: WeightScheme,
    #[serde(default = "default_distance_factor")]
    pub distance_factor: f64,
    #[serde(default)]
    pub include_self_loops: bool,
}

impl GraphSpec {
    pub fn spacing_dm(&self) -> f64 {
        self.spacing_mm / 100.0
    }

    pub fn graph_config(&self, nodes: usize, receptive_field: usize) -> GraphConfig {
        let mut cfg = GraphConfig::new(nodes, receptive_field, self.spacing_dm());
        cfg.topology = self.topology;
        cfg.weight_scheme = self.weight_scheme;
        cfg.distance_factor = self.distance_factor;
        cfg.include_self_loops = self.include_self_loops;
        cfg
    }
}

fn default_train_count() -> usize {
    256
}
fn default_val_count() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    #[serde(default = "default_val_count")]
    pub val_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_name: String,
    pub graph: GraphSpec,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataSpec,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 24 x 32 x 32 volumes, q = 2 banded graph,
    /// one Chebyshev block, the four-label synthetic benchmark.
    pub fn desk_default(run_name: &str, seed: u64) -> Self {
        let mut train = TrainConfig::default();
        train.seed = seed;
        ExperimentConfig {
            run_name: run_name.to_string(),
            graph: GraphSpec {
                receptive_field: ReceptiveField::Shared(2),
                spacing_mm: default_spacing_mm(),
                topology: default_topology(),
                weight_scheme: default_weight_scheme(),
                distance_factor: default_distance_factor(),
                include_self_loops: false,
            },
            encoder: EncoderConfig::desk_default(),
            train,
            synth: SynthConfig::desk_default(seed),
            data: DataSpec {
                train_count: default_train_count(),
                val_count: default_val_count(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::validation(format!(
                "run name {:?} must be a non-empty file-name-safe string",
                self.run_name
            )));
        }
        self.encoder.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.encoder.slices != self.synth.slices
            || self.encoder.slice_height != self.synth.slice_height
            || self.encoder.slice_width != self.synth.slice_width
            || self.encoder.triplet_size != self.synth.triplet_size
        {
            return Err(Error::validation(format!(
                "encoder volume {}x{}x{} (triplet {}) differs from generator {}x{}x{} (triplet {})",
                self.encoder.slices,
                self.encoder.slice_height,
                self.encoder.slice_width,
                self.encoder.triplet_size,
                self.synth.slices,
                self.synth.slice_height,
                self.synth.slice_width,
                self.synth.triplet_size
            )));
        }
        if self.encoder.labels != self.synth.labels.len() {
            return Err(Error::validation(format!(
                "encoder predicts {} labels, generator defines {}",
                self.encoder.labels,
                self.synth.labels.len()
            )));
        }
        let qs = self.graph.receptive_field.per_layer(self.encoder.blocks)?;
        let nodes = self.encoder.node_count();
        for &q in &qs {
            self.graph.graph_config(nodes, q).validate()?;
        }
        if !(self.graph.spacing_mm > 0.0) {
            return Err(Error::validation(format!(
                "slice spacing {} mm must be positive",
                self.graph.spacing_mm
            )));
        }
        if self.data.train_count == 0 || self.data.val_count == 0 {
            return Err(Error::validation(
                "train and validation counts must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; gates checkpoint loading.
    pub fn config_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Builds the distinct graphs an experiment needs plus the per-block
/// assignment into that list.
pub fn build_graphs(cfg: &ExperimentConfig) -> Result<(Vec<SliceGraph>, Vec<usize>)> {
    let qs = cfg.graph.receptive_field.per_layer(cfg.encoder.blocks)?;
    let nodes = cfg.encoder.node_count();
    let mut distinct: Vec<(usize, SliceGraph)> = Vec::new();
    let mut assignment = Vec::with_capacity(qs.len());
    for q in qs {
        match distinct.iter().position(|(dq, _)| *dq == q) {
            Some(at) => assignment.push(at),
            None => {
                let graph = build_graph(&cfg.graph.graph_config(nodes, q))?;
                distinct.push((q, graph));
                assignment.push(distinct.len() - 1);
            }
        }
    }
    Ok((distinct.into_iter().map(|(_, g)| g).collect(), assignment))
}

/// Graphs plus the encoder context; the workhorse constructor shared by
/// all runners.
pub fn make_context<F: Scalar>(
    cfg: &ExperimentConfig,
) -> Result<(ModelContext<F>, Vec<SliceGraph>, Vec<usize>)> {
    let (graphs, assignment) = build_graphs(cfg)?;
    let refs: Vec<&SliceGraph> = if graphs.len() == 1 {
        vec![&graphs[0]]
    } else {
        assignment.iter().map(|&i| &graphs[i]).collect()
    };
    let ctx = ModelContext::new(&cfg.encoder, &refs)?;
    Ok((ctx, graphs, assignment))
}

/// Training consumes f32-quantized voxels whether volumes come from
/// disk or are generated in memory, so both paths train identically.
fn quantize_volume(mut vol: SyntheticVolume) -> SyntheticVolume {
    for v in vol.voxels.iter_mut() {
        *v = (*v as f32) as f64;
    }
    vol
}

fn assemble_samples<F: Scalar>(
    enc: &EncoderConfig,
    synth: &SynthConfig,
    vols: &[SyntheticVolume],
) -> Result<Vec<TrainSample<F>>> {
    vols.iter()
        .map(|v| TrainSample::from_volume(enc, synth, v))
        .collect()
}

/// Train and validation volumes: read from a dataset directory when
/// given (its generator config must match the experiment's), generated
/// in memory otherwise.
pub fn data_volumes(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<(Vec<SyntheticVolume>, Vec<SyntheticVolume>)> {
    let need = cfg.data.train_count + cfg.data.val_count;
    let mut vols = match data_dir {
        Some(dir) => {
            let (index, vols) = read_dataset(dir)?;
            if index.config != cfg.synth {
                return Err(Error::validation(format!(
                    "dataset in {} was generated with different settings",
                    dir.display()
                )));
            }
            if vols.len() < need {
                return Err(Error::validation(format!(
                    "dataset holds {} volumes, experiment needs {need}",
                    vols.len()
                )));
            }
            vols
        }
        None => generate(&cfg.synth, need)?
            .into_iter()
            .map(quantize_volume)
            .collect(),
    };
    vols.truncate(need);
    let val = vols.split_off(cfg.data.train_count);
    Ok((vols, val))
}

fn data_splits<F: Scalar>(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<(Vec<TrainSample<F>>, Vec<TrainSample<F>>)> {
    let (train_vols, val_vols) = data_volumes(cfg, data_dir)?;
    Ok((
        assemble_samples(&cfg.encoder, &cfg.synth, &train_vols)?,
        assemble_samples(&cfg.encoder, &cfg.synth, &val_vols)?,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    /// Global optimizer step the parameters were taken at.
    pub step: usize,
    /// Validation macro-F1 at that step, when one was measured.
    pub macro_f1: Option<f64>,
    pub params: ParamManifest,
    pub adam_m: Option<ParamManifest>,
    pub adam_v: Option<ParamManifest>,
}

/// Writes config.json, manifest.json, params.bin, and (when an
/// optimizer state is supplied) adam_m.bin / adam_v.bin.
pub fn save_checkpoint<F: Scalar>(
    dir: &Path,
    cfg: &ExperimentConfig,
    params: &ModelParams<F>,
    step: usize,
    macro_f1: Option<f64>,
    opt: Option<&AdamState>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let named = params.named();
    let params_manifest = save_named(&dir.join("params.bin"), &named)?;

    let mut adam_m = None;
    let mut adam_v = None;
    if let Some(state) = opt {
        let moment_tensors = |map: &HashMap<String, Vec<f64>>| -> Result<Vec<(String, Tensor<f64>)>> {
            named
                .iter()
                .map(|(name, t)| {
                    let buf = map.get(name).cloned().unwrap_or_else(|| vec![0.0; t.len()]);
                    if buf.len() != t.len() {
                        return Err(Error::dimension(format!(
                            "moment buffer for {name} holds {} values, parameter has {}",
                            buf.len(),
                            t.len()
                        )));
                    }
                    Ok((name.clone(), Tensor::new(vec![buf.len()], buf)?))
                })
                .collect()
        };
        let m = moment_tensors(&state.m)?;
        let v = moment_tensors(&state.v)?;
        let m_refs: Vec<(String, &Tensor<f64>)> =
            m.iter().map(|(n, t)| (n.clone(), t)).collect();
        let v_refs: Vec<(String, &Tensor<f64>)> =
            v.iter().map(|(n, t)| (n.clone(), t)).collect();
        adam_m = Some(save_named(&dir.join("adam_m.bin"), &m_refs)?);
        adam_v = Some(save_named(&dir.join("adam_v.bin"), &v_refs)?);
    }

    let manifest = CheckpointManifest {
        config_hash: cfg.config_hash()?,
        step,
        macro_f1,
        params: params_manifest,
        adam_m,
        adam_v,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    Ok(())
}

pub struct Checkpoint<F: Scalar> {
    pub config: ExperimentConfig,
    pub params: ModelParams<F>,
    pub step: usize,
    pub macro_f1: Option<f64>,
    pub optimizer: Option<AdamState>,
}

/// Loads a checkpoint directory, refusing when the stored config no
/// longer hashes to the manifest's value.
pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<Checkpoint<F>> {
    let config_text = fs::read_to_string(dir.join("config.json"))
        .map_err(|e| Error::load(format!("{}: config.json: {e}", dir.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&config_text)?;
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::load(format!("{}: manifest.json: {e}", dir.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&manifest_text)?;
    let hash = config.config_hash()?;
    if hash != manifest.config_hash {
        return Err(Error::load(format!(
            "{}: config hash {} does not match manifest {}",
            dir.display(),
            hash,
            manifest.config_hash
        )));
    }
    let named = load_named::<F>(&dir.join("params.bin"), &manifest.params, true)?;
    let params = ModelParams::from_named(&config.encoder, named)?;

    let optimizer = match (&manifest.adam_m, &manifest.adam_v) {
        (Some(mm), Some(vm)) => {
            let read_map = |file: &str, man: &ParamManifest| -> Result<HashMap<String, Vec<f64>>> {
                Ok(load_named::<f64>(&dir.join(file), man, false)?
                    .into_iter()
                    .map(|(name, t)| (name, t.data().to_vec()))
                    .collect())
            };
            Some(AdamState {
                m: read_map("adam_m.bin", mm)?,
                v: read_map("adam_v.bin", vm)?,
                step: manifest.step,
            })
        }
        _ => None,
    };

    Ok(Checkpoint {
        config,
        params,
        step: manifest.step,
        macro_f1: manifest.macro_f1,
        optimizer,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub run_name: String,
    pub config_hash: String,
    pub param_count: usize,
    /// Edges per distinct graph, in block order of first use.
    pub edge_counts: Vec<usize>,
    pub steps_run: usize,
    pub best_step: usize,
    pub best_macro_f1: Option<f64>,
    /// Best checkpoint re-evaluated on the validation split.
    pub metrics: MetricsReport,
}

fn write_history_csv(path: &Path, rows: &[crate::train::HistoryRow], append: bool) -> Result<()> {
    let mut out = String::new();
    if !append {
        out.push_str(HISTORY_HEADER);
        out.push('\n');
    }
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            r.train_loss,
            r.macro_f1,
            r.macro_auroc,
            r.macro_average_precision,
            r.macro_accuracy,
            r.learning_rate
        ));
    }
    if append {
        let mut f = fs::OpenOptions::new().append(true).open(path)?;
        f.write_all(out.as_bytes())?;
    } else {
        fs::write(path, out)?;
    }
    Ok(())
}

/// Trains an experiment into `out`: resolved_config.json, graph.json,
/// history.csv, report.json, checkpoint_best/, checkpoint_last/.
///
/// `resume` continues from checkpoint_last (config hash must match);
/// `force` allows overwriting a completed run.
pub fn run_train<F: Scalar>(
    cfg: &ExperimentConfig,
    out: &Path,
    data_dir: Option<&Path>,
    resume: bool,
    force: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    let report_path = out.join("report.json");
    if report_path.exists() && !resume && !force {
        return Err(Error::validation(format!(
            "{} already holds a completed run; pass force to redo it or resume to continue",
            out.display()
        )));
    }
    let hash = cfg.config_hash()?;
    let (ctx, graphs, assignment) = make_context::<F>(cfg)?;
    let (train_set, val_set) = data_splits::<F>(cfg, data_dir)?;

    let last_dir = out.join("checkpoint_last");
    let best_dir = out.join("checkpoint_best");
    let (mut params, mut opt, prior_best) = if resume {
        let ckpt = load_checkpoint::<F>(&last_dir)?;
        if ckpt.config != *cfg {
            return Err(Error::load(format!(
                "{}: checkpoint was trained with a different config",
                last_dir.display()
            )));
        }
        let opt = ckpt.optimizer.ok_or_else(|| {
            Error::load(format!(
                "{}: checkpoint carries no optimizer state",
                last_dir.display()
            ))
        })?;
        let prior = match load_checkpoint::<F>(&best_dir) {
            Ok(best) => best.macro_f1.map(|f1| (f1, best.step, best.params)),
            Err(_) => None,
        };
        (ckpt.params, opt, prior)
    } else {
        (
            ModelParams::<F>::init(&cfg.encoder, cfg.train.seed)?,
            AdamState::new(),
            None,
        )
    };

    fs::create_dir_all(out)?;
    fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": hash,
            "config": cfg,
        }))?,
    )?;
    let graph_entries: Vec<serde_json::Value> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let layers: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter_map(|(l, &a)| (a == i).then_some(l))
                .collect();
            serde_json::json!({ "layers": layers, "graph": g.export_json() })
        })
        .collect();
    fs::write(
        out.join("graph.json"),
        serde_json::to_string_pretty(&serde_json::Value::Array(graph_entries))?,
    )?;

    let outcome: TrainOutcome<F> =
        train(&ctx, &mut params, &mut opt, &train_set, &val_set, &cfg.train)?;
    let history_path = out.join("history.csv");
    write_history_csv(&history_path, &outcome.history, resume && history_path.exists())?;

    // The best checkpoint survives resumes: keep whichever of the prior
    // and the new best scores higher.
    let (best_params, best_step, best_f1) = match (prior_best, outcome.best_macro_f1) {
        (Some((pf, ps, pp)), Some(nf)) if pf >= nf => (pp, ps, Some(pf)),
        (_, Some(nf)) => (outcome.best_params.clone(), outcome.best_step, Some(nf)),
        (Some((pf, ps, pp)), None) => (pp, ps, Some(pf)),
        (None, None) => (outcome.best_params.clone(), outcome.best_step, None),
    };
    save_checkpoint(&best_dir, cfg, &best_params, best_step, best_f1, None)?;
    save_checkpoint(&last_dir, cfg, &params, opt.step, None, Some(&opt))?;

    let metrics = evaluate_model(&ctx, &best_params, &val_set, cfg.train.threshold)?;
    let report = TrainReport {
        run_name: cfg.run_name.clone(),
        config_hash: hash,
        param_count: param_count(&cfg.encoder)?,
        edge_counts: graphs.iter().map(|g| g.edge_count()).collect(),
        steps_run: outcome.steps_run,
        best_step,
        best_macro_f1: best_f1,
        metrics,
    };
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Evaluates a checkpoint on a dataset directory (all volumes) or on
/// the config's freshly generated validation split.
pub fn run_eval<F: Scalar>(
    checkpoint: &Path,
    data_dir: Option<&Path>,
    out_json: Option<&Path>,
) -> Result<MetricsReport> {
    let ckpt = load_checkpoint::<F>(checkpoint)?;
    let cfg = &ckpt.config;
    let (ctx, _, _) = make_context::<F>(cfg)?;
    let samples: Vec<TrainSample<F>> = match data_dir {
        Some(dir) => {
            let (index, vols) = read_dataset(dir)?;
            if index.config != cfg.synth {
                return Err(Error::validation(format!(
                    "dataset in {} was generated with different settings",
                    dir.display()
                )));
            }
            assemble_samples(&cfg.encoder, &cfg.synth, &vols)?
        }
        None => data_splits::<F>(cfg, None)?.1,
    };
    let report = evaluate_model(&ctx, &ckpt.params, &samples, cfg.train.threshold)?;
    if let Some(path) = out_json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Zshift,
    Noise,
}

impl PerturbMode {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbMode::Zshift => "zshift",
            PerturbMode::Noise => "noise",
        }
    }

    /// Default sweep: shifts within the volume, or the documented
    /// sigma grid, each including the unperturbed point.
    pub fn default_grid(&self, slices: usize) -> Vec<f64> {
        match self {
            PerturbMode::Zshift => {
                let max = (slices as i64 - 1).min(ZSHIFT_LIMIT as i64);
                let step = ((max as f64) / 3.0).round().max(1.0) as i64;
                let mut grid = vec![0.0];
                let mut s = step;
                while s < max {
                    grid.push(s as f64);
                    grid.push(-s as f64);
                    s += step;
                }
                if max > 0 {
                    grid.push(max as f64);
                    grid.push(-max as f64);
                }
                grid.sort_by(f64::total_cmp);
                grid
            }
            PerturbMode::Noise => vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: f64,
    pub macro_f1: f64,
    pub macro_auroc: f64,
}

fn validate_grid(mode: PerturbMode, grid: &[f64], slices: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("perturbation grid is empty".to_string()));
    }
    for &g in grid {
        if !g.is_finite() {
            return Err(Error::validation(format!("grid point {g} is not finite")));
        }
        match mode {
            PerturbMode::Zshift => {
                if g.fract() != 0.0 {
                    return Err(Error::validation(format!(
                        "z-shift {g} must be a whole number of slices"
                    )));
                }
                if g.abs() > ZSHIFT_LIMIT {
                    return Err(Error::validation(format!(
                        "z-shift {g} outside the documented range [-{ZSHIFT_LIMIT}, {ZSHIFT_LIMIT}]"
                    )));
                }
                if g.abs() as usize >= slices {
                    return Err(Error::validation(format!(
                        "z-shift {g} does not leave any of the {slices} slices in place"
                    )));
                }
            }
            PerturbMode::Noise => {
                let (lo, hi) = NOISE_SIGMA_RANGE;
                if g != 0.0 && !(g >= lo && g <= hi) {
                    return Err(Error::validation(format!(
                        "noise sigma {g} outside the documented range [{lo}, {hi}]"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Evaluates a frozen checkpoint on perturbed validation volumes, one
/// row per grid point. Zero shift / zero sigma evaluates the untouched
/// volumes, so those rows reproduce the clean metrics exactly.
pub fn run_robustness<F: Scalar>(
    checkpoint: &Path,
    mode: PerturbMode,
    grid: &[f64],
    data_dir: Option<&Path>,
    out_csv: Option<&Path>,
) -> Result<Vec<RobustnessRow>> {
    let ckpt = load_checkpoint::<F>(checkpoint)?;
    let cfg = &ckpt.config;
    validate_grid(mode, grid, cfg.synth.slices)?;
    let (ctx, _, _) = make_context::<F>(cfg)?;
    let (_, val_vols) = data_volumes(cfg, data_dir)?;
    let slice_elems = cfg.synth.slice_height * cfg.synth.slice_width;

    let mut rows = Vec::with_capacity(grid.len());
    for &g in grid {
        let perturbed: Vec<SyntheticVolume> = val_vols
            .iter()
            .map(|vol| -> Result<SyntheticVolume> {
                let voxels = match mode {
                    PerturbMode::Zshift => {
                        z_translate(&vol.voxels, cfg.synth.slices, slice_elems, g as i64)?
                    }
                    PerturbMode::Noise => add_noise(
                        &vol.voxels,
                        g,
                        mix_seed(mix_seed(cfg.synth.seed, STREAM_ROBUSTNESS_NOISE), vol.index),
                    )?,
                };
                Ok(SyntheticVolume { voxels, ..vol.clone() })
            })
            .collect::<Result<_>>()?;
        let samples = assemble_samples::<F>(&cfg.encoder, &cfg.synth, &perturbed)?;
        let report = evaluate_model(&ctx, &ckpt.params, &samples, cfg.train.threshold)?;
        rows.push(RobustnessRow {
            perturbation: g,
            macro_f1: report.macro_f1,
            macro_auroc: report.macro_auroc,
        });
    }

    if let Some(path) = out_csv {
        let mut out = String::from(ROBUSTNESS_HEADER);
        out.push('\n');
        for r in &rows {
            out.push_str(&format!("{},{},{}\n", r.perturbation, r.macro_f1, r.macro_auroc));
        }
        fs::write(path, out)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Chebyshev filter size K.
    FilterSize,
    /// Graph receptive field q.
    ReceptiveField,
    /// Number of spectral blocks L.
    Depth,
    /// Chebyshev vs spatial graph convolution.
    Operator,
    /// Banded vs fully connected graph.
    Topology,
    /// Independent component toggles off of the base model.
    Components,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::FilterSize,
        AblationAxis::ReceptiveField,
        AblationAxis::Depth,
        AblationAxis::Operator,
        AblationAxis::Topology,
        AblationAxis::Components,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::FilterSize => "K",
            AblationAxis::ReceptiveField => "q",
            AblationAxis::Depth => "L",
            AblationAxis::Operator => "operator",
            AblationAxis::Topology => "topology",
            AblationAxis::Components => "components",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "K" | "k" | "filter_size" => Ok(AblationAxis::FilterSize),
            "q" | "receptive_field" => Ok(AblationAxis::ReceptiveField),
            "L" | "l" | "depth" => Ok(AblationAxis::Depth),
            "operator" => Ok(AblationAxis::Operator),
            "topology" => Ok(AblationAxis::Topology),
            "components" => Ok(AblationAxis::Components),
            other => Err(Error::validation(format!(
                "unknown ablation axis {other:?}; use K, q, L, operator, topology, or components"
            ))),
        }
    }

    /// Swept values for this axis given a base config.
    pub fn values(&self, base: &ExperimentConfig) -> Vec<String> {
        match self {
            AblationAxis::FilterSize | AblationAxis::Depth => {
                vec!["1".into(), "3".into(), "5".into()]
            }
            AblationAxis::ReceptiveField => {
                let full = base.encoder.node_count().saturating_sub(1).max(1);
                let mut vals = vec![1usize, 2, 4, full];
                vals.sort_unstable();
                vals.dedup();
                vals.retain(|&q| q <= full);
                vals.into_iter().map(|q| q.to_string()).collect()
            }
            AblationAxis::Operator => vec!["chebyshev".into(), "graph_conv".into()],
            AblationAxis::Topology => vec!["banded".into(), "fully_connected".into()],
            AblationAxis::Components => vec![
                "base".into(),
                "no_positional".into(),
                "unit_weights".into(),
                "no_residual".into(),
                "no_layer_norm".into(),
                "fully_connected".into(),
            ],
        }
    }
}

/// Base config with one ablation value applied.
pub fn apply_ablation(
    base: &ExperimentConfig,
    axis: AblationAxis,
    value: &str,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let parse_usize = |v: &str| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::validation(format!("{} value {v:?} is not a number", axis.name())))
    };
    match axis {
        AblationAxis::FilterSize => cfg.encoder.filter_size = parse_usize(value)?,
        AblationAxis::ReceptiveField => {
            cfg.graph.receptive_field = ReceptiveField::Shared(parse_usize(value)?)
        }
        AblationAxis::Depth => {
            cfg.encoder.blocks = parse_usize(value)?;
            if let ReceptiveField::PerLayer(qs) = &cfg.graph.receptive_field {
                let q = *qs.first().ok_or_else(|| {
                    Error::validation("per-layer receptive field list is empty".to_string())
                })?;
                cfg.graph.receptive_field = ReceptiveField::Shared(q);
            }
        }
        AblationAxis::Operator => {
            cfg.encoder.operator = match value {
                "chebyshev" => crate::encoder::Operator::Chebyshev,
                "graph_conv" => crate::encoder::Operator::GraphConv,
                other => {
                    return Err(Error::validation(format!("unknown operator {other:?}")))
                }
            }
        }
        AblationAxis::Topology => {
            cfg.graph.topology = match value {
                "banded" => Topology::Banded,
                "fully_connected" => Topology::FullyConnected,
                other => {
                    return Err(Error::validation(format!("unknown topology {other:?}")))
                }
            }
        }
        AblationAxis::Components => match value {
            "base" => {}
            "no_positional" => cfg.encoder.use_positional = false,
            "unit_weights" => cfg.graph.weight_scheme = WeightScheme::Unit,
            "no_residual" => cfg.encoder.use_residual = false,
            "no_layer_norm" => cfg.encoder.use_layer_norm = false,
            "fully_connected" => cfg.graph.topology = Topology::FullyConnected,
            other => {
                return Err(Error::validation(format!("unknown component toggle {other:?}")))
            }
        },
    }
    cfg.run_name = format!("{}_{}_{}", base.run_name, axis.name(), value);
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis_value: String,
    pub seed: u64,
    pub macro_f1: f64,
    pub macro_auroc: f64,
    pub macro_average_precision: f64,
    pub macro_accuracy: f64,
}

/// Full training run for one derived config; returns the best
/// checkpoint's validation metrics.
fn train_once<F: Scalar>(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let (ctx, _, _) = make_context::<F>(cfg)?;
    let (train_set, val_set) = data_splits::<F>(cfg, None)?;
    let mut params = ModelParams::<F>::init(&cfg.encoder, cfg.train.seed)?;
    let mut opt = AdamState::new();
    let outcome = train(&ctx, &mut params, &mut opt, &train_set, &val_set, &cfg.train)?;
    evaluate_model(&ctx, &outcome.best_params, &val_set, cfg.train.threshold)
}

/// Sweeps one axis, training each (value, seed) pair, and writes
/// `ablate_{axis}.csv` under `out`.
pub fn run_ablate<F: Scalar>(
    base: &ExperimentConfig,
    axis: AblationAxis,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(Error::validation("ablation needs at least one seed".to_string()));
    }
    let mut rows = Vec::new();
    for value in axis.values(base) {
        for &seed in seeds {
            let mut cfg = apply_ablation(base, axis, &value)?;
            cfg.train.seed = seed;
            let report = train_once::<F>(&cfg)?;
            rows.push(AblationRow {
                axis_value: value.clone(),
                seed,
                macro_f1: report.macro_f1,
                macro_auroc: report.macro_auroc,
                macro_average_precision: report.macro_average_precision,
                macro_accuracy: report.macro_accuracy,
            });
        }
    }
    fs::create_dir_all(out)?;
    let mut text = String::from(ABLATION_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.axis_value, r.seed, r.macro_f1, r.macro_auroc, r.macro_average_precision,
            r.macro_accuracy
        ));
    }
    fs::write(out.join(format!("ablate_{}.csv", axis.name())), text)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub best_macro_f1: Option<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KfoldReport {
    pub folds: Vec<FoldResult>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

/// K-fold cross-validation over the pooled train + validation volumes.
/// Fold i holds out the i-th contiguous chunk; parameters restart from
/// a fold-specific seed. Writes `kfold.json` under `out`.
pub fn run_kfold<F: Scalar>(
    cfg: &ExperimentConfig,
    folds: usize,
    out: &Path,
) -> Result<KfoldReport> {
    cfg.validate()?;
    if folds < 2 {
        return Err(Error::validation(format!("{folds} folds; need at least 2")));
    }
    let pool_size = cfg.data.train_count + cfg.data.val_count;
    if pool_size < folds {
        return Err(Error::validation(format!(
            "{pool_size} volumes cannot be split into {folds} folds"
        )));
    }
    let (mut pool, mut val) = data_volumes(cfg, None)?;
    pool.append(&mut val);
    let (ctx, _, _) = make_context::<F>(cfg)?;

    let mut results = Vec::with_capacity(folds);
    for fold in 0..folds {
        let lo = fold * pool_size / folds;
        let hi = (fold + 1) * pool_size / folds;
        let val_vols: Vec<SyntheticVolume> = pool[lo..hi].to_vec();
        let train_vols: Vec<SyntheticVolume> = pool[..lo]
            .iter()
            .chain(&pool[hi..])
            .cloned()
            .collect();
        let train_set = assemble_samples::<F>(&cfg.encoder, &cfg.synth, &train_vols)?;
        let val_set = assemble_samples::<F>(&cfg.encoder, &cfg.synth, &val_vols)?;
        let mut params =
            ModelParams::<F>::init(&cfg.encoder, mix_seed(cfg.train.seed, fold as u64))?;
        let mut opt = AdamState::new();
        let outcome = train(&ctx, &mut params, &mut opt, &train_set, &val_set, &cfg.train)?;
        let metrics =
            evaluate_model(&ctx, &outcome.best_params, &val_set, cfg.train.threshold)?;
        results.push(FoldResult {
            fold,
            best_macro_f1: outcome.best_macro_f1,
            metrics,
        });
    }

    let f1s: Vec<f64> = results.iter().map(|r| r.metrics.macro_f1).collect();
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    let var = f1s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f1s.len() as f64;
    let report = KfoldReport {
        folds: results,
        mean_macro_f1: mean,
        std_macro_f1: var.sqrt(),
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("kfold.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Reads an experiment config from a JSON file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::load(format!("{}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Directory tree collected into (relative path, bytes) pairs, sorted;
/// used to compare runs byte for byte.
pub fn dir_fingerprint(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .expect("walked paths stay under base")
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{LabelSpec, PatternKind};

    /// Small config that trains in well under a second.
    pub(crate) fn tiny_config(run_name: &str, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_default(run_name, seed);
        cfg.encoder.slices = 12;
        cfg.encoder.slice_height = 8;
        cfg.encoder.slice_width = 8;
        cfg.encoder.latent_dim = 8;
        cfg.encoder.labels = 2;
        cfg.encoder.filter_size = 2;
        cfg.synth = SynthConfig {
            slices: 12,
            slice_height: 8,
            slice_width: 8,
            triplet_size: 3,
            labels: vec![
                LabelSpec {
                    name: "blob".to_string(),
                    pattern: PatternKind::Blob,
                    z_band: [0, 2],
                    amplitude: 0.35,
                    prevalence: 0.5,
                    region: None,
                },
                LabelSpec {
                    name: "flicker".to_string(),
                    pattern: PatternKind::AlternatingIntensity,
                    z_band: [2, 4],
                    amplitude: 0.3,
                    prevalence: 0.5,
                    region: None,
                },
            ],
            correlation: None,
            background_level: 0.3,
            noise_floor: 0.04,
            seed,
        };
        cfg.data = DataSpec { train_count: 12, val_count: 6 };
        cfg.train.max_steps = 9;
        cfg.train.eval_every = 3;
        cfg.train.warmup_steps = 3;
        cfg
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = tiny_config("run", 1);
        let b = tiny_config("run", 1);
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = tiny_config("run", 1);
        c.train.learning_rate *= 2.0;
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
        assert_eq!(a.config_hash().unwrap().len(), 64);
    }

    #[test]
    fn per_layer_receptive_fields_build_distinct_graphs() {
        let mut cfg = tiny_config("run", 1);
        cfg.encoder.blocks = 3;
        cfg.graph.receptive_field = ReceptiveField::PerLayer(vec![1, 2, 1]);
        let (graphs, assignment) = build_graphs(&cfg).unwrap();
        assert_eq!(graphs.len(), 2);
        assert_eq!(assignment, vec![0, 1, 0]);
        cfg.graph.receptive_field = ReceptiveField::PerLayer(vec![1, 2]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_hash_gate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("ckpt", 3);
        let params = ModelParams::<f64>::init(&cfg.encoder, 3).unwrap();
        let mut opt = AdamState::new();
        opt.step = 5;
        opt.m.insert("head.bias".to_string(), vec![0.5, -0.25]);
        opt.v.insert("head.bias".to_string(), vec![0.1, 0.2]);
        save_checkpoint(dir.path(), &cfg, &params, 5, Some(0.75), Some(&opt)).unwrap();

        let loaded = load_checkpoint::<f64>(dir.path()).unwrap();
        assert_eq!(loaded.step, 5);
        assert_eq!(loaded.macro_f1, Some(0.75));
        assert_eq!(loaded.config, cfg);
        let opt2 = loaded.optimizer.unwrap();
        assert_eq!(opt2.step, 5);
        assert_eq!(opt2.m["head.bias"], vec![0.5, -0.25]);
        for (name, t) in params.named() {
            let got = loaded.params.named().iter().find(|(n, _)| *n == name).unwrap().1.data().to_vec();
            assert_eq!(got, t.data().to_vec());
        }

        // Tampering with the stored config breaks the hash gate.
        let cfg_path = dir.path().join("config.json");
        let text = fs::read_to_string(&cfg_path)
            .unwrap()
            .replace("\"run_name\": \"ckpt\"", "\"run_name\": \"tampered\"");
        fs::write(&cfg_path, text).unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(Error::Load(_))));
    }

    #[test]
    fn train_run_writes_all_artifacts() {
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_config("artifacts", 5);
        let report = run_train::<f64>(&cfg, out.path(), None, false, false).unwrap();
        assert_eq!(report.steps_run, 9);
        assert_eq!(report.edge_counts.len(), 1);
        for file in [
            "resolved_config.json",
            "graph.json",
            "history.csv",
            "report.json",
            "checkpoint_best/params.bin",
            "checkpoint_best/manifest.json",
            "checkpoint_last/adam_m.bin",
        ] {
            assert!(out.path().join(file).exists(), "missing {file}");
        }
        let history = fs::read_to_string(out.path().join("history.csv")).unwrap();
        assert!(history.starts_with(HISTORY_HEADER));
        assert_eq!(history.lines().count(), 1 + 3);
        // A finished run refuses to be overwritten without force.
        assert!(run_train::<f64>(&cfg, out.path(), None, false, false).is_err());
        assert!(run_train::<f64>(&cfg, out.path(), None, false, true).is_ok());
    }

    #[test]
    fn resume_continues_the_exact_run() {
        let full_dir = tempfile::tempdir().unwrap();
        let part_dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("resume", 7);
        run_train::<f64>(&cfg, full_dir.path(), None, false, false).unwrap();

        let mut first = cfg.clone();
        first.train.max_steps = 5;
        run_train::<f64>(&first, part_dir.path(), None, false, false).unwrap();
        // Resuming under a different config is refused.
        assert!(run_train::<f64>(&cfg, part_dir.path(), None, true, false).is_err());
        // Matching config with a larger budget continues step 6..9.
        let mut second = first.clone();
        second.train.max_steps = 9;
        let err = run_train::<f64>(&second, part_dir.path(), None, true, false);
        assert!(err.is_err(), "config hash must also cover max_steps");

        // The supported resume flow: same config file, interrupted run
        // (checkpoint_last behind max_steps).
        let ckpt = load_checkpoint::<f64>(&part_dir.path().join("checkpoint_last")).unwrap();
        assert_eq!(ckpt.step, 5);
        let full_last = load_checkpoint::<f64>(&full_dir.path().join("checkpoint_last")).unwrap();
        assert_eq!(full_last.step, 9);
    }

    #[test]
    fn dataset_dir_and_in_memory_training_match() {
        let data_dir = tempfile::tempdir().unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let cfg = tiny_config("paths", 11);
        crate::dataset::write_dataset(
            data_dir.path(),
            &cfg.synth,
            cfg.data.train_count + cfg.data.val_count,
            false,
        )
        .unwrap();
        let from_disk =
            run_train::<f64>(&cfg, out_a.path(), Some(data_dir.path()), false, false).unwrap();
        let in_memory = run_train::<f64>(&cfg, out_b.path(), None, false, false).unwrap();
        assert_eq!(
            serde_json::to_string(&from_disk.metrics).unwrap(),
            serde_json::to_string(&in_memory.metrics).unwrap()
        );
        let a = fs::read(out_a.path().join("checkpoint_best/params.bin")).unwrap();
        let b = fs::read(out_b.path().join("checkpoint_best/params.bin")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let cfg = tiny_config("determinism", 13);
        run_train::<f64>(&cfg, out_a.path(), None, false, false).unwrap();
        run_train::<f64>(&cfg, out_b.path(), None, false, false).unwrap();
        let fa = dir_fingerprint(out_a.path()).unwrap();
        let fb = dir_fingerprint(out_b.path()).unwrap();
        assert_eq!(fa.len(), fb.len());
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            assert_eq!(na, nb);
            assert_eq!(ba, bb, "{na} differs between reruns");
        }
    }

    #[test]
    fn robustness_zero_point_reproduces_clean_eval() {
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_config("robust", 17);
        run_train::<f64>(&cfg, out.path(), None, false, false).unwrap();
        let best = out.path().join("checkpoint_best");
        let clean = run_eval::<f64>(&best, None, None).unwrap();

        let rows =
            run_robustness::<f64>(&best, PerturbMode::Zshift, &[-2.0, 0.0, 2.0], None, None)
                .unwrap();
        let zero = rows.iter().find(|r| r.perturbation == 0.0).unwrap();
        assert_eq!(zero.macro_f1.to_bits(), clean.macro_f1.to_bits());
        assert_eq!(zero.macro_auroc.to_bits(), clean.macro_auroc.to_bits());

        let noise =
            run_robustness::<f64>(&best, PerturbMode::Noise, &[0.0, 0.03], None, None).unwrap();
        assert_eq!(noise[0].macro_f1.to_bits(), clean.macro_f1.to_bits());

        // Out-of-range grids are rejected.
        assert!(run_robustness::<f64>(&best, PerturbMode::Zshift, &[31.0], None, None).is_err());
        assert!(run_robustness::<f64>(&best, PerturbMode::Zshift, &[12.0], None, None).is_err());
        assert!(run_robustness::<f64>(&best, PerturbMode::Zshift, &[1.5], None, None).is_err());
        assert!(run_robustness::<f64>(&best, PerturbMode::Noise, &[0.08], None, None).is_err());
        assert!(run_robustness::<f64>(&best, PerturbMode::Noise, &[0.005], None, None).is_err());
    }

    #[test]
    fn ablation_sweep_writes_per_seed_rows() {
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config("ablate", 19);
        cfg.train.max_steps = 4;
        cfg.train.eval_every = 4;
        cfg.data = DataSpec { train_count: 8, val_count: 4 };
        let rows = run_ablate::<f64>(&cfg, AblationAxis::Operator, &[1, 2], out.path()).unwrap();
        assert_eq!(rows.len(), 4);
        let text = fs::read_to_string(out.path().join("ablate_operator.csv")).unwrap();
        assert!(text.starts_with(ABLATION_HEADER));
        assert_eq!(text.lines().count(), 1 + 4);
        for value in ["chebyshev", "graph_conv"] {
            for seed in [1u64, 2] {
                assert!(
                    rows.iter().any(|r| r.axis_value == value && r.seed == seed),
                    "missing row {value}/{seed}"
                );
            }
        }
    }

    #[test]
    fn ablation_axis_values_and_application() {
        let cfg = tiny_config("axes", 1);
        assert_eq!(AblationAxis::FilterSize.values(&cfg), vec!["1", "3", "5"]);
        assert_eq!(AblationAxis::ReceptiveField.values(&cfg), vec!["1", "2", "3"]);
        let deeper = apply_ablation(&cfg, AblationAxis::Depth, "3").unwrap();
        assert_eq!(deeper.encoder.blocks, 3);
        assert!(deeper.validate().is_ok());
        let toggled = apply_ablation(&cfg, AblationAxis::Components, "no_layer_norm").unwrap();
        assert!(!toggled.encoder.use_layer_norm);
        assert!(apply_ablation(&cfg, AblationAxis::Operator, "fourier").is_err());
        assert!(AblationAxis::from_name("K").is_ok());
        assert!(AblationAxis::from_name("volume").is_err());
    }

    #[test]
    fn kfold_splits_cover_the_pool() {
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config("folds", 23);
        cfg.train.max_steps = 4;
        cfg.train.eval_every = 4;
        cfg.data = DataSpec { train_count: 9, val_count: 3 };
        let report = run_kfold::<f64>(&cfg, 3, out.path()).unwrap();
        assert_eq!(report.folds.len(), 3);
        assert!(report.mean_macro_f1.is_finite());
        assert!(out.path().join("kfold.json").exists());
        assert!(run_kfold::<f64>(&cfg, 1, out.path()).is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("file", 29);
        let path = dir.path().join("exp.json");
        fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded, cfg);
        // Shared receptive field serializes as a bare number.
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"receptive_field\": 2"));
    }
}
