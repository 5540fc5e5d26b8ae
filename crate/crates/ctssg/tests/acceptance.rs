//! Acceptance checks for the whole pipeline. Each test ends with one
//! PASS/FAIL line; run `cargo test --test acceptance -- --nocapture`
//! to see all ten verdicts together.

mod common;

use std::time::Instant;

use rand::Rng;

use ctssg::encoder::{cheb_conv, param_count};
use ctssg::experiment::{
    apply_ablation, dir_fingerprint, run_ablate, run_eval, run_robustness, run_train,
    AblationAxis, DataSpec, ExperimentConfig, PerturbMode,
};
use ctssg::graph::{build_graph, edge_weight, GraphConfig, Topology};
use ctssg::metrics::{auroc, f1_binary};
use ctssg::oracles::{suite_chebyshev, suite_gradients, suite_laplacian, suite_metrics};
use ctssg::optim::AdamState;
use ctssg::synth::{generate, SynthConfig};
use ctssg::train::{train, TrainSample};
use ctssg::util::rng_for;
use ctssg::{Tape, Tensor};

fn conclude(criterion: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} ({detail})");
    assert!(ok, "criterion {criterion} failed: {detail}");
}

#[test]
fn c01_chebyshev_spectral_equivalence() {
    let started = Instant::now();
    let report = suite_chebyshev(100).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let ok = report.passed() && elapsed < 10.0;
    conclude(
        "01 chebyshev-spectral-equivalence",
        ok,
        &format!(
            "{} graphs, max rel err {:.3e} < 1e-10, {:.2}s < 10s{}",
            report.cases,
            report.max_err,
            elapsed,
            if report.failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {:?}", report.failures)
            }
        ),
    );
}

#[test]
fn c02_laplacian_invariant_battery() {
    let started = Instant::now();
    let report = suite_laplacian(50).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let ok = report.passed() && elapsed < 10.0;
    conclude(
        "02 laplacian-invariants",
        ok,
        &format!(
            "{} configs: symmetry, row sums, psd, scaled spectrum, self-loop \
             invariance, edge counts; {:.2}s < 10s{}",
            report.cases,
            elapsed,
            if report.failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {:?}", report.failures)
            }
        ),
    );
}

#[test]
fn c03_edge_weight_contract() {
    let mut problems = Vec::new();

    let w0 = edge_weight(5, 5, 0.0075, 3.0).unwrap();
    if w0 != 2.0 {
        problems.push(format!("w(0) = {w0}, want exactly 2"));
    }

    let w1 = edge_weight(1, 0, 0.0075, 3.0).unwrap();
    let direct = 1.0 + 1.0 / (1.0 + 3.0 * 1.0 * 0.0075);
    if (w1 - direct).abs() > 1e-9 {
        problems.push(format!("w(1, 0.0075) = {w1}, direct evaluation {direct}"));
    }
    if (w1 - 1.9779951100244499).abs() > 1e-9 {
        problems.push(format!("w(1, 0.0075) = {w1} drifted from its frozen value"));
    }

    // Strict decrease in the index distance over a 100-point grid.
    let mut prev = f64::INFINITY;
    for d in 1..=100usize {
        let w = edge_weight(d, 0, 0.0075, 3.0).unwrap();
        if w >= prev {
            problems.push(format!("w not strictly decreasing at distance {d}"));
            break;
        }
        prev = w;
    }

    // Strict decrease in the slice spacing over a 100-point grid.
    let mut prev = f64::INFINITY;
    for i in 0..100 {
        let s = 0.001 + 0.099 * i as f64 / 99.0;
        let w = edge_weight(1, 0, s, 3.0).unwrap();
        if w >= prev {
            problems.push(format!("w not strictly decreasing at spacing {s}"));
            break;
        }
        prev = w;
    }

    conclude(
        "03 edge-weight-contract",
        problems.is_empty(),
        &if problems.is_empty() {
            format!("w(0)=2 exact, w(1,0.0075)={w1:.10} within 1e-9, strict decay over both grids")
        } else {
            problems.join("; ")
        },
    );
}

#[test]
fn c04_gradient_correctness() {
    let started = Instant::now();
    let report = suite_gradients().unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let ok = report.passed() && elapsed < 60.0;
    conclude(
        "04 gradient-correctness",
        ok,
        &format!(
            "{} checks: ops < 1e-6, full model < 1e-4 at h=1e-5 (worst {:.3e}); {:.2}s < 60s{}",
            report.cases,
            report.max_err,
            elapsed,
            if report.failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {:?}", report.failures)
            }
        ),
    );
}

/// Does perturbing input row j move output row i?
fn probe_locality(
    graph_cfg: &GraphConfig,
    filter_size: usize,
    problems: &mut Vec<String>,
) {
    let n = graph_cfg.nodes;
    let graph = build_graph(graph_cfg).unwrap();
    let lhat = graph.scaled_laplacian_tensor::<f64>();
    let mut rng = rng_for(0xACCE_0005, (n * 16 + filter_size) as u64);
    let d_in = 3;
    let d_out = 2;
    let thetas: Vec<Tensor<f64>> = (0..filter_size)
        .map(|_| {
            Tensor::new(
                vec![d_in, d_out],
                (0..d_in * d_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let x_data: Vec<f64> = (0..n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![n, d_in], x_data.clone()).unwrap();
    let tape = Tape::new();
    let base = cheb_conv(&tape, &x, &lhat, &thetas).unwrap();

    for j in 0..n {
        let hops = graph.hop_distances(j).unwrap();
        let mut bumped = x_data.clone();
        for c in 0..d_in {
            bumped[j * d_in + c] += 0.7;
        }
        let xj = Tensor::new(vec![n, d_in], bumped).unwrap();
        let out = cheb_conv(&tape, &xj, &lhat, &thetas).unwrap();
        for i in 0..n {
            let diff = (0..d_out)
                .map(|c| (out.data()[i * d_out + c] - base.data()[i * d_out + c]).abs())
                .fold(0.0f64, f64::max);
            let changed = diff > 1e-12;
            let expected = matches!(hops[i], Some(h) if h + 1 <= filter_size);
            if changed != expected {
                problems.push(format!(
                    "{:?} n={n} K={filter_size}: output {i} vs input {j} \
                     (hops {:?}) changed={changed}, expected {expected}",
                    graph_cfg.topology, hops[i]
                ));
            }
        }
    }
}

#[test]
fn c05_k_locality() {
    let mut problems = Vec::new();
    let mut banded_pairs = 0usize;
    for &(n, q) in &[(6usize, 1usize), (12, 2), (9, 3)] {
        for filter_size in 1..=4 {
            probe_locality(&GraphConfig::new(n, q, 0.0075), filter_size, &mut problems);
            banded_pairs += n * n;
        }
    }
    // Fully connected: hop distance 1 everywhere, so any K >= 2 mixes
    // every pair and K = 1 none.
    let mut fc_pairs = 0usize;
    for filter_size in 1..=4 {
        let mut cfg = GraphConfig::new(6, 1, 0.0075);
        cfg.topology = Topology::FullyConnected;
        probe_locality(&cfg, filter_size, &mut problems);
        fc_pairs += 36;
    }
    conclude(
        "05 k-locality",
        problems.is_empty(),
        &if problems.is_empty() {
            format!(
                "{banded_pairs} banded and {fc_pairs} fully-connected (i, j) probes: \
                 output moves iff hop distance <= K-1"
            )
        } else {
            problems.join("; ")
        },
    );
}

#[test]
fn c06_metrics_oracle_equivalence() {
    let report = suite_metrics(200).unwrap();
    let frozen = auroc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    let frozen_ok = frozen == Some(0.75);
    let ok = report.passed() && frozen_ok;
    conclude(
        "06 metrics-oracle-equivalence",
        ok,
        &format!(
            "{} instances within 1e-12 (max err {:.3e}); auroc([.1,.4,.35,.8] vs [0,0,1,1]) = {:?}{}",
            report.cases,
            report.max_err,
            frozen,
            if report.failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {:?}", report.failures)
            }
        ),
    );
}

#[test]
fn c07_learning_sanity() {
    let mut problems = Vec::new();

    // Matched-filter reference on 500 fresh volumes.
    let synth = SynthConfig::desk_default(2024);
    let vols = generate(&synth, 500).unwrap();
    let labels = synth.labels.len();
    let mut mf_f1 = 0.0;
    for l in 0..labels {
        let scores: Vec<f64> = vols
            .iter()
            .map(|v| {
                let pred =
                    ctssg::synth::matched_filter_predict(&synth, &v.voxels).unwrap();
                pred[l] as f64
            })
            .collect();
        let targets: Vec<f64> = vols.iter().map(|v| v.labels[l] as f64).collect();
        match f1_binary(&scores, &targets, 0.5).unwrap() {
            Some(f1) => mf_f1 += f1 / labels as f64,
            None => problems.push(format!("label {l} produced no F1")),
        }
    }
    if mf_f1 < 0.99 {
        problems.push(format!("matched-filter macro-F1 {mf_f1:.4} < 0.99"));
    }

    // Training on one core reaches 0.85 validation macro-F1 in budget.
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::desk_default("acceptance_desk", 1);
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let report = pool
        .install(|| run_train::<f64>(&cfg, out.path(), None, false, false))
        .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let best = report.best_macro_f1.unwrap_or(0.0);
    if best < 0.85 {
        problems.push(format!("best val macro-F1 {best:.4} < 0.85"));
    }
    if report.steps_run > 2000 {
        problems.push(format!("{} steps > 2000", report.steps_run));
    }
    if elapsed > 300.0 {
        problems.push(format!("{elapsed:.1}s > 300s on one core"));
    }

    // lr = 0 leaves every parameter bit untouched.
    let mut frozen_cfg = cfg.clone();
    frozen_cfg.train.learning_rate = 0.0;
    frozen_cfg.train.max_steps = 50;
    frozen_cfg.train.eval_every = 50;
    frozen_cfg.data = DataSpec { train_count: 16, val_count: 8 };
    let (ctx, _, _) = ctssg::experiment::make_context::<f64>(&frozen_cfg).unwrap();
    let (train_vols, val_vols) =
        ctssg::experiment::data_volumes(&frozen_cfg, None).unwrap();
    let to_samples = |vols: &[ctssg::synth::SyntheticVolume]| -> Vec<TrainSample<f64>> {
        vols.iter()
            .map(|v| TrainSample::from_volume(&frozen_cfg.encoder, &frozen_cfg.synth, v).unwrap())
            .collect()
    };
    let (train_set, val_set) = (to_samples(&train_vols), to_samples(&val_vols));
    let mut params =
        ctssg::encoder::ModelParams::<f64>::init(&frozen_cfg.encoder, frozen_cfg.train.seed)
            .unwrap();
    let bits_before: Vec<u64> = params
        .named()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect();
    let mut opt = AdamState::new();
    train(&ctx, &mut params, &mut opt, &train_set, &val_set, &frozen_cfg.train).unwrap();
    let bits_after: Vec<u64> = params
        .named()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect();
    if bits_before != bits_after {
        problems.push("lr=0 training changed parameter bits".to_string());
    }

    conclude(
        "07 learning-sanity",
        problems.is_empty(),
        &if problems.is_empty() {
            format!(
                "matched-filter macro-F1 {mf_f1:.4} >= 0.99; val macro-F1 {best:.4} >= 0.85 \
                 at step {} of {} in {elapsed:.1}s on one core; lr=0 bit-identical",
                report.best_step, report.steps_run
            )
        } else {
            problems.join("; ")
        },
    );
}

/// Desk-shaped config shrunk to seconds-scale training.
fn micro_desk_config(run_name: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_default(run_name, seed);
    cfg.data = DataSpec { train_count: 24, val_count: 8 };
    cfg.train.max_steps = 60;
    cfg.train.eval_every = 20;
    cfg.train.warmup_steps = 10;
    cfg
}

#[test]
fn c08_byte_for_byte_determinism() {
    let mut problems = Vec::new();
    let cfg = micro_desk_config("determinism", 33);
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    run_train::<f64>(&cfg, out_a.path(), None, false, false).unwrap();
    run_train::<f64>(&cfg, out_b.path(), None, false, false).unwrap();

    let fa = dir_fingerprint(out_a.path()).unwrap();
    let fb = dir_fingerprint(out_b.path()).unwrap();
    let mut files = 0usize;
    if fa.len() != fb.len() {
        problems.push(format!("{} vs {} files", fa.len(), fb.len()));
    } else {
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            if na != nb {
                problems.push(format!("file lists diverge: {na} vs {nb}"));
            } else if ba != bb {
                problems.push(format!("{na} differs between reruns"));
            }
            files += 1;
        }
    }

    // Result CSVs from a frozen checkpoint are identical across calls.
    let best = out_a.path().join("checkpoint_best");
    let csv_a = out_a.path().join("rob_a.csv");
    let csv_b = out_a.path().join("rob_b.csv");
    run_robustness::<f64>(&best, PerturbMode::Noise, &[0.0, 0.03], None, Some(&csv_a)).unwrap();
    run_robustness::<f64>(&best, PerturbMode::Noise, &[0.0, 0.03], None, Some(&csv_b)).unwrap();
    if std::fs::read(&csv_a).unwrap() != std::fs::read(&csv_b).unwrap() {
        problems.push("robustness CSVs differ across reruns".to_string());
    }

    conclude(
        "08 determinism",
        problems.is_empty(),
        &if problems.is_empty() {
            format!("two runs agree on all {files} artifact files and repeated result CSVs")
        } else {
            problems.join("; ")
        },
    );
}

#[test]
fn c09_robustness_harness_contract() {
    let mut problems = Vec::new();
    let out = tempfile::tempdir().unwrap();
    let mut cfg = micro_desk_config("robustness", 41);
    cfg.train.max_steps = 20;
    cfg.train.eval_every = 20;
    run_train::<f64>(&cfg, out.path(), None, false, false).unwrap();
    let best = out.path().join("checkpoint_best");
    let clean = run_eval::<f64>(&best, None, None).unwrap();

    // Zero shift and zero sigma reproduce the clean evaluation exactly.
    let shifts = [-23.0, -2.0, 0.0, 2.0, 23.0];
    let rows = run_robustness::<f64>(&best, PerturbMode::Zshift, &shifts, None, None).unwrap();
    if rows.len() != shifts.len() {
        problems.push(format!("{} z-shift rows for {} grid points", rows.len(), shifts.len()));
    }
    let zero = rows.iter().find(|r| r.perturbation == 0.0).unwrap();
    if zero.macro_f1.to_bits() != clean.macro_f1.to_bits()
        || zero.macro_auroc.to_bits() != clean.macro_auroc.to_bits()
    {
        problems.push("zero shift differs from the unperturbed evaluation".to_string());
    }
    let sigmas = [0.0, 0.01, 0.04, 0.07];
    let noise = run_robustness::<f64>(&best, PerturbMode::Noise, &sigmas, None, None).unwrap();
    if noise.len() != sigmas.len() {
        problems.push(format!("{} noise rows for {} grid points", noise.len(), sigmas.len()));
    }
    if noise[0].macro_f1.to_bits() != clean.macro_f1.to_bits() {
        problems.push("zero sigma differs from the unperturbed evaluation".to_string());
    }

    // Grids outside the documented ranges are refused.
    for (mode, grid) in [
        (PerturbMode::Zshift, vec![31.0]),
        (PerturbMode::Zshift, vec![-31.0]),
        (PerturbMode::Zshift, vec![24.0]), // would empty the 24-slice volume
        (PerturbMode::Zshift, vec![1.5]),
        (PerturbMode::Noise, vec![0.005]),
        (PerturbMode::Noise, vec![0.08]),
        (PerturbMode::Noise, vec![-0.01]),
    ] {
        if run_robustness::<f64>(&best, mode, &grid, None, None).is_ok() {
            problems.push(format!("{:?} grid {grid:?} was accepted", mode.name()));
        }
    }

    conclude(
        "09 robustness-harness",
        problems.is_empty(),
        &if problems.is_empty() {
            format!(
                "zero points bit-identical to clean eval; shift grid honors \
                 [-30, 30] within the {}-slice volume and sigma honors [0.01, 0.07]",
                cfg.synth.slices
            )
        } else {
            problems.join("; ")
        },
    );
}

#[test]
fn c10_ablation_harness_contract() {
    let mut problems = Vec::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config("ablation", 51);
    let seeds = [0u64, 1];

    for axis in [
        AblationAxis::FilterSize,
        AblationAxis::Depth,
        AblationAxis::Topology,
        AblationAxis::Operator,
    ] {
        let values = axis.values(&cfg);
        match run_ablate::<f64>(&cfg, axis, &seeds, out.path()) {
            Ok(rows) => {
                for value in &values {
                    for &seed in &seeds {
                        if !rows.iter().any(|r| r.axis_value == *value && r.seed == seed) {
                            problems.push(format!(
                                "axis {} missing row for value {value} seed {seed}",
                                axis.name()
                            ));
                        }
                    }
                }
                let csv = out.path().join(format!("ablate_{}.csv", axis.name()));
                match std::fs::read_to_string(&csv) {
                    Ok(text) => {
                        let want = 1 + values.len() * seeds.len();
                        if text.lines().count() != want {
                            problems.push(format!(
                                "{} has {} lines, want {want}",
                                csv.display(),
                                text.lines().count()
                            ));
                        }
                    }
                    Err(e) => problems.push(format!("{}: {e}", csv.display())),
                }
            }
            Err(e) => problems.push(format!("axis {} failed: {e}", axis.name())),
        }
    }
    if !matches!(AblationAxis::FilterSize.values(&cfg).as_slice(),
        [a, b, c] if a == "1" && b == "3" && c == "5")
    {
        problems.push("filter-size sweep is not {1, 3, 5}".to_string());
    }

    // Parameter count strictly increases along K and along L.
    for axis in [AblationAxis::FilterSize, AblationAxis::Depth] {
        let mut prev = 0usize;
        for value in ["1", "3", "5"] {
            let derived = apply_ablation(&cfg, axis, value).unwrap();
            let count = param_count(&derived.encoder).unwrap();
            if count <= prev {
                problems.push(format!(
                    "{} = {value}: parameter count {count} does not exceed {prev}",
                    axis.name()
                ));
            }
            prev = count;
        }
    }

    conclude(
        "10 ablation-harness",
        problems.is_empty(),
        &if problems.is_empty() {
            "K {1,3,5}, L {1,3,5}, topology {banded, fully_connected}, operator \
             {chebyshev, graph_conv} sweeps completed with per-seed CSV rows; \
             parameter count strictly increases with K and with L"
                .to_string()
        } else {
            problems.join("; ")
        },
    );
}
