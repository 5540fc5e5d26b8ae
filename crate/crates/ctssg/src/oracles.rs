//! Independent reference implementations and the check suites built on
//! them.
//!
//! Every reference here deliberately uses a different algorithm than the
//! production code: spectral filtering goes through an explicit
//! eigendecomposition instead of the three-term recurrence, ranking
//! metrics are recomputed by pairwise counting instead of sorting, and
//! gradients are compared against central finite differences. The suites
//! are callable from tests and from the `oracle-check` command.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{
    cheb_conv, graph_conv, EncoderConfig, FeatureInit, ModelContext, ModelParams,
};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphConfig, Topology, WeightScheme};
use crate::metrics;
use crate::tensor::{grad_check, Tape, Tensor};

/// Chebyshev polynomial values T_k(x) for k in 0..count by the scalar
/// recurrence.
pub fn chebyshev_values(x: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let v = match k {
            0 => 1.0,
            1 => x,
            _ => 2.0 * x * out[k - 1] - out[k - 2],
        };
        out.push(v);
    }
    out
}

/// Spectral-domain reference for the Chebyshev filter: eigendecompose the
/// operator, apply T_k to the eigenvalues, and filter each order
/// explicitly: sum_k U diag(T_k(lambda)) U^T X theta_k.
pub fn cheb_filter_spectral(
    operator: &DMatrix<f64>,
    x: &DMatrix<f64>,
    thetas: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let n = operator.nrows();
    if operator.ncols() != n || x.nrows() != n {
        return Err(Error::dimension(format!(
            "spectral filter: operator {}x{}, features {}x{}",
            n,
            operator.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    if thetas.is_empty() {
        return Err(Error::validation("spectral filter: no coefficients".to_string()));
    }
    let eig = operator.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let xt = u.transpose() * x;
    let d_out = thetas[0].ncols();
    let mut acc = DMatrix::zeros(n, d_out);
    for (k, theta) in thetas.iter().enumerate() {
        let mut scaled = xt.clone();
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            let tk = chebyshev_values(lam, k + 1)[k];
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= tk;
            }
        }
        acc += u * scaled * theta;
    }
    Ok(acc)
}

/// AUROC by exhaustive pair counting; ties contribute one half.
pub fn auroc_pairwise(scores: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension("auroc reference: length mismatch".to_string()));
    }
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &ti) in targets.iter().enumerate() {
        if ti != 1.0 {
            continue;
        }
        for (j, &tj) in targets.iter().enumerate() {
            if tj != 0.0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        return Ok(None);
    }
    Ok(Some(wins / pairs))
}

/// Average precision by pairwise rank counting: the rank of element i is
/// the number of strictly higher scores plus earlier ties, matching the
/// stable descending sort used by the production code.
pub fn average_precision_by_counting(scores: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension(
            "average precision reference: length mismatch".to_string(),
        ));
    }
    let n = scores.len();
    let rank = |i: usize| -> usize {
        let mut r = 1usize;
        for j in 0..n {
            if scores[j] > scores[i] || (scores[j] == scores[i] && j < i) {
                r += 1;
            }
        }
        r
    };
    let positives: Vec<usize> = (0..n).filter(|&i| targets[i] == 1.0).collect();
    if positives.is_empty() {
        return Ok(None);
    }
    let ranks: Vec<usize> = (0..n).map(rank).collect();
    let mut sum = 0.0f64;
    for &i in &positives {
        let ri = ranks[i];
        let hits = positives.iter().filter(|&&p| ranks[p] <= ri).count();
        sum += hits as f64 / ri as f64;
    }
    Ok(Some(sum / positives.len() as f64))
}

/// F1 recomputed from explicit precision and recall.
pub fn f1_by_precision_recall(
    scores: &[f64],
    targets: &[f64],
    threshold: f64,
) -> Result<Option<f64>> {
    let mut tp = 0f64;
    let mut pred_pos = 0f64;
    let mut actual_pos = 0f64;
    for (&s, &t) in scores.iter().zip(targets) {
        let p = s > threshold;
        if p {
            pred_pos += 1.0;
        }
        if t == 1.0 {
            actual_pos += 1.0;
            if p {
                tp += 1.0;
            }
        }
    }
    if pred_pos == 0.0 && actual_pos == 0.0 {
        return Ok(None);
    }
    if tp == 0.0 {
        return Ok(Some(0.0));
    }
    let precision = tp / pred_pos;
    let recall = tp / actual_pos;
    Ok(Some(2.0 * precision * recall / (precision + recall)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    /// Largest observed error across comparisons, when meaningful.
    pub max_err: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err_max(got: &[f64], want: &[f64]) -> f64 {
    let scale = want
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()))
        .max(1e-12);
    got.iter()
        .zip(want)
        .fold(0.0f64, |a, (&g, &w)| a.max((g - w).abs()))
        / scale
}

/// Recurrence-built filter against the spectral-domain reference on
/// random small graphs, cycling the polynomial order through 1..=5.
pub fn suite_chebyshev(cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE_0001);
    let mut failures = Vec::new();
    let mut max_err = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(2..=16);
        let mut cfg = GraphConfig::new(n, rng.random_range(1..=n - 1), rng.random_range(0.001..0.1));
        cfg.include_self_loops = rng.random::<f64>() < 0.3;
        if rng.random::<f64>() < 0.2 {
            cfg.topology = Topology::FullyConnected;
        }
        let graph = build_graph(&cfg)?;
        let k = case % 5 + 1;
        let d_in = rng.random_range(1..=6);
        let d_out = rng.random_range(1..=5);
        let x: Vec<f64> = (0..n * d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let thetas_raw: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d_in * d_out).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();

        let tape = Tape::<f64>::new();
        let xt = Tensor::new(vec![n, d_in], x.clone())?;
        let lhat = graph.scaled_laplacian_tensor::<f64>();
        let thetas_t: Vec<Tensor<f64>> = thetas_raw
            .iter()
            .map(|v| Tensor::new(vec![d_in, d_out], v.clone()))
            .collect::<Result<_>>()?;
        let got = cheb_conv(&tape, &xt, &lhat, &thetas_t)?;

        let xm = DMatrix::from_row_slice(n, d_in, &x);
        let thetas_m: Vec<DMatrix<f64>> = thetas_raw
            .iter()
            .map(|v| DMatrix::from_row_slice(d_in, d_out, v))
            .collect();
        let want = cheb_filter_spectral(&graph.scaled_laplacian, &xm, &thetas_m)?;
        let mut want_flat = Vec::with_capacity(n * d_out);
        for i in 0..n {
            for j in 0..d_out {
                want_flat.push(want[(i, j)]);
            }
        }
        let err = rel_err_max(got.data(), &want_flat);
        max_err = max_err.max(err);
        if err >= 1e-10 {
            failures.push(format!(
                "case {case}: n={n} k={k} relative error {err:.3e} >= 1e-10"
            ));
        }
    }
    Ok(SuiteReport {
        name: "chebyshev".to_string(),
        cases,
        max_err,
        failures,
    })
}

/// Structural battery on one graph config. Returns failure descriptions.
pub fn laplacian_battery(cfg: &GraphConfig) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    let g = build_graph(cfg)?;
    let n = g.node_count();

    for i in 0..n {
        for j in 0..n {
            if g.adjacency[(i, j)] != g.adjacency[(j, i)] {
                failures.push(format!("adjacency not exactly symmetric at ({i},{j})"));
            }
        }
    }
    for i in 0..n {
        let s = g.laplacian.row(i).sum();
        if s.abs() >= 1e-12 {
            failures.push(format!("laplacian row {i} sums to {s:.3e}"));
        }
    }
    let eig = g.laplacian.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        failures.push(format!("smallest laplacian eigenvalue {min_eig:.3e}"));
    }
    let eig_scaled = g.scaled_laplacian.clone().symmetric_eigen();
    for v in eig_scaled.eigenvalues.iter() {
        if *v < -1.0 - 1e-9 || *v > 1.0 + 1e-9 {
            failures.push(format!("scaled eigenvalue {v} outside [-1, 1]"));
        }
    }
    // Self loops shift degrees and adjacency diagonal equally, leaving L
    // untouched.
    let flipped = GraphConfig {
        include_self_loops: !cfg.include_self_loops,
        ..cfg.clone()
    };
    let g2 = build_graph(&flipped)?;
    let diff = (&g.laplacian - &g2.laplacian).abs().max();
    if diff >= 1e-12 {
        failures.push(format!("self loops changed the laplacian by {diff:.3e}"));
    }
    if g.edge_count() != cfg.expected_edge_count() {
        failures.push(format!(
            "edge count {} vs formula {}",
            g.edge_count(),
            cfg.expected_edge_count()
        ));
    }
    Ok(failures)
}

/// Laplacian battery over random configs spanning both topologies and
/// weight schemes.
pub fn suite_laplacian(cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE_0002);
    let mut failures = Vec::new();
    for case in 0..cases {
        let n = rng.random_range(2..=40);
        let mut cfg = GraphConfig::new(
            n,
            rng.random_range(1..=n),
            rng.random_range(5e-4..0.05),
        );
        cfg.include_self_loops = rng.random::<f64>() < 0.5;
        if rng.random::<f64>() < 0.25 {
            cfg.topology = Topology::FullyConnected;
        }
        if rng.random::<f64>() < 0.25 {
            cfg.weight_scheme = WeightScheme::Unit;
        }
        cfg.distance_factor = rng.random_range(0.5..5.0);
        for f in laplacian_battery(&cfg)? {
            failures.push(format!("case {case} (n={n}): {f}"));
        }
    }
    Ok(SuiteReport {
        name: "laplacian".to_string(),
        cases,
        max_err: 0.0,
        failures,
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, trainable: bool) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    if trainable {
        Tensor::param(shape, data).unwrap()
    } else {
        Tensor::new(shape, data).unwrap()
    }
}

/// Finite-difference checks for every op, then the full model.
pub fn suite_gradients() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE_0003);
    let mut failures = Vec::new();
    let mut max_err = 0.0f64;
    let h = 1e-5;
    let op_tol = 1e-6;

    // Each case: (name, parameters, objective). The objective contracts
    // the op output against a fixed random cotangent so every output
    // element influences the scalar.
    type Obj = Box<dyn Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>>;
    let mut cases: Vec<(String, Vec<Tensor<f64>>, Obj)> = Vec::new();

    let cot = |rng: &mut ChaCha8Rng, shape: Vec<usize>| rand_tensor(rng, shape, false);

    {
        let a = rand_tensor(&mut rng, vec![3, 4], true);
        let b = rand_tensor(&mut rng, vec![3, 4], true);
        let c = cot(&mut rng, vec![3, 4]);
        cases.push((
            "add".to_string(),
            vec![a, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.add(&p[0], &p[1])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![3, 4], true);
        let b = rand_tensor(&mut rng, vec![3, 4], true);
        let c = cot(&mut rng, vec![3, 4]);
        cases.push((
            "sub".to_string(),
            vec![a, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.sub(&p[0], &p[1])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![5], true);
        let b = rand_tensor(&mut rng, vec![5], true);
        let c = cot(&mut rng, vec![5]);
        cases.push((
            "mul".to_string(),
            vec![a, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.mul(&p[0], &p[1])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![4, 3], true);
        let c = cot(&mut rng, vec![4, 3]);
        cases.push((
            "scale".to_string(),
            vec![a],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.scale(&p[0], -1.7)?, &c)?)),
        ));
    }
    {
        let x = rand_tensor(&mut rng, vec![4, 3], true);
        let b = rand_tensor(&mut rng, vec![3], true);
        let c = cot(&mut rng, vec![4, 3]);
        cases.push((
            "add_bias".to_string(),
            vec![x, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.add_bias(&p[0], &p[1])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![3, 5], true);
        let b = rand_tensor(&mut rng, vec![5, 2], true);
        let c = cot(&mut rng, vec![3, 2]);
        cases.push((
            "matmul".to_string(),
            vec![a, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.matmul(&p[0], &p[1])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 6], true);
        let c = cot(&mut rng, vec![3, 4]);
        cases.push((
            "reshape".to_string(),
            vec![a],
            Box::new(move |t, p| {
                t.sum_all(&t.mul(&t.reshape(&p[0], vec![3, 4])?, &c)?)
            }),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![6], true);
        let idx = std::sync::Arc::new(vec![0i64, 5, 2, 2, -1, 4, 1, -1]);
        let c = cot(&mut rng, vec![8]);
        cases.push((
            "gather".to_string(),
            vec![a],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.gather(&p[0], &idx, vec![8])?, &c)?)),
        ));
    }
    {
        let a = rand_tensor(&mut rng, vec![3, 4, 2], true);
        let c = cot(&mut rng, vec![3, 2]);
        cases.push((
            "mean_axis".to_string(),
            vec![a],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.mean_axis(&p[0], 1)?, &c)?)),
        ));
    }
    {
        let x = rand_tensor(&mut rng, vec![4, 6], true);
        let g = rand_tensor(&mut rng, vec![6], true);
        let b = rand_tensor(&mut rng, vec![6], true);
        let c = cot(&mut rng, vec![4, 6]);
        cases.push((
            "layer_norm".to_string(),
            vec![x, g, b],
            Box::new(move |t, p| {
                t.sum_all(&t.mul(&t.layer_norm(&p[0], &p[1], &p[2], 1e-5)?, &c)?)
            }),
        ));
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 5], true);
        let c = cot(&mut rng, vec![3, 5]);
        cases.push((
            "gelu".to_string(),
            vec![x],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.gelu(&p[0])?, &c)?)),
        ));
    }
    {
        let logits = rand_tensor(&mut rng, vec![3, 4], true);
        let targets = Tensor::new(
            vec![3, 4],
            (0..12)
                .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
                .collect(),
        )?;
        cases.push((
            "bce_with_logits".to_string(),
            vec![logits],
            Box::new(move |t, p| t.bce_with_logits(&p[0], &targets)),
        ));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 4], true);
        let w = rand_tensor(&mut rng, vec![4, 2], true);
        let b = rand_tensor(&mut rng, vec![2], true);
        let c = cot(&mut rng, vec![2, 3, 2]);
        cases.push((
            "linear".to_string(),
            vec![x, w, b],
            Box::new(move |t, p| t.sum_all(&t.mul(&t.linear(&p[0], &p[1], &p[2])?, &c)?)),
        ));
    }
    {
        let graph = build_graph(&GraphConfig::new(6, 2, 0.0075))?;
        let lhat = graph.scaled_laplacian_tensor::<f64>();
        let x = rand_tensor(&mut rng, vec![6, 3], true);
        let t0 = rand_tensor(&mut rng, vec![3, 2], true);
        let t1 = rand_tensor(&mut rng, vec![3, 2], true);
        let t2 = rand_tensor(&mut rng, vec![3, 2], true);
        let c = cot(&mut rng, vec![6, 2]);
        cases.push((
            "cheb_conv".to_string(),
            vec![x, t0, t1, t2],
            Box::new(move |t, p| {
                let out = cheb_conv(t, &p[0], &lhat, &p[1..4])?;
                t.sum_all(&t.mul(&out, &c)?)
            }),
        ));
    }
    {
        let graph = build_graph(&GraphConfig::new(5, 2, 0.0075))?;
        let adj = graph.adjacency_tensor::<f64>();
        let x = rand_tensor(&mut rng, vec![5, 3], true);
        let ws = rand_tensor(&mut rng, vec![3, 3], true);
        let wn = rand_tensor(&mut rng, vec![3, 3], true);
        let c = cot(&mut rng, vec![5, 3]);
        cases.push((
            "graph_conv".to_string(),
            vec![x, ws, wn],
            Box::new(move |t, p| {
                let out = graph_conv(t, &p[0], &adj, &p[1], &p[2])?;
                t.sum_all(&t.mul(&out, &c)?)
            }),
        ));
    }

    let mut total_cases = 0usize;
    for (name, params, obj) in &cases {
        total_cases += 1;
        match grad_check(obj.as_ref(), params, h) {
            Ok(report) => {
                max_err = max_err.max(report.max_rel_err);
                if report.max_rel_err >= op_tol {
                    failures.push(format!(
                        "op {name}: max relative error {:.3e} >= {op_tol:.0e} \
                         (param {}, element {})",
                        report.max_rel_err, report.worst.0, report.worst.1
                    ));
                }
            }
            Err(e) => failures.push(format!("op {name}: {e}")),
        }
    }

    // Full model, both feature extractors: loss gradient with respect to
    // every parameter at h = 1e-5 within 1e-4.
    for feature in [FeatureInit::FlattenLinear, FeatureInit::TinyCnn] {
        total_cases += 1;
        let mut cfg = EncoderConfig::desk_default();
        cfg.slices = 12;
        cfg.slice_height = 8;
        cfg.slice_width = 8;
        cfg.latent_dim = 8;
        cfg.filter_size = 3;
        cfg.blocks = 1;
        cfg.labels = 4;
        cfg.feature_init = feature;
        let graph = build_graph(&GraphConfig::new(cfg.node_count(), 2, 0.0075))?;
        let ctx = ModelContext::<f64>::new(&cfg, &[&graph])?;
        let template = ModelParams::<f64>::init(&cfg, 0xFEED)?;
        let volume = {
            let n = cfg.slices * cfg.slice_height * cfg.slice_width;
            Tensor::new(
                vec![cfg.slices, cfg.slice_height, cfg.slice_width],
                (0..n).map(|_| rng.random::<f64>()).collect(),
            )?
        };
        let targets = Tensor::new(vec![cfg.labels], vec![1.0, 0.0, 1.0, 0.0])?;
        let params: Vec<Tensor<f64>> = template
            .named()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let name = format!("model_{feature:?}");
        let obj = {
            let ctx = ctx.clone();
            let template = template.clone();
            let volume = volume.clone();
            let targets = targets.clone();
            move |tape: &Tape<f64>, ps: &[Tensor<f64>]| -> Result<Tensor<f64>> {
                let mp = template.with_tensors(ps)?;
                let logits = ctx.encode(tape, &volume, &mp)?;
                tape.bce_with_logits(&logits, &targets)
            }
        };
        match grad_check(&obj, &params, h) {
            Ok(report) => {
                max_err = max_err.max(report.max_rel_err);
                if report.max_rel_err >= 1e-4 {
                    failures.push(format!(
                        "{name}: max relative error {:.3e} >= 1e-4 over {} coordinates",
                        report.max_rel_err, report.coords_checked
                    ));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }

    Ok(SuiteReport {
        name: "gradients".to_string(),
        cases: total_cases,
        max_err,
        failures,
    })
}

/// Production metrics against counting references on random instances
/// with deliberate score ties and degenerate labels.
pub fn suite_metrics(cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE_0004);
    let mut failures = Vec::new();
    let mut max_err = 0.0f64;
    let tol = 1e-12;

    // Frozen case first.
    let frozen = metrics::auroc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0])?;
    if frozen != Some(0.75) {
        failures.push(format!("frozen auroc case returned {frozen:?}, want 0.75"));
    }

    let compare = |name: &str,
                       case: usize,
                       got: Option<f64>,
                       want: Option<f64>,
                       failures: &mut Vec<String>|
     -> f64 {
        match (got, want) {
            (Some(g), Some(w)) => {
                let err = (g - w).abs();
                if err >= tol {
                    failures.push(format!("case {case} {name}: {g} vs reference {w}"));
                }
                err
            }
            (None, None) => 0.0,
            _ => {
                failures.push(format!(
                    "case {case} {name}: definedness mismatch {got:?} vs {want:?}"
                ));
                0.0
            }
        }
    };

    for case in 0..cases {
        let b = rng.random_range(2..=40);
        // A third of the cases quantize scores to force ties.
        let levels = match case % 3 {
            0 => 0,
            1 => 4,
            _ => 2,
        };
        let scores: Vec<f64> = (0..b)
            .map(|_| {
                let v: f64 = rng.random();
                if levels > 0 {
                    (v * levels as f64).floor() / levels as f64
                } else {
                    v
                }
            })
            .collect();
        let p: f64 = rng.random();
        let targets: Vec<f64> = (0..b)
            .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        let threshold = 0.5;

        let e1 = compare(
            "auroc",
            case,
            metrics::auroc(&scores, &targets)?,
            auroc_pairwise(&scores, &targets)?,
            &mut failures,
        );
        let e2 = compare(
            "average_precision",
            case,
            metrics::average_precision(&scores, &targets)?,
            average_precision_by_counting(&scores, &targets)?,
            &mut failures,
        );
        let e3 = compare(
            "f1",
            case,
            metrics::f1_binary(&scores, &targets, threshold)?,
            f1_by_precision_recall(&scores, &targets, threshold)?,
            &mut failures,
        );
        // Accuracy reference: direct miscount.
        let acc = metrics::accuracy_binary(&scores, &targets, threshold)?;
        let wrong = scores
            .iter()
            .zip(&targets)
            .filter(|(&s, &t)| (s > threshold) != (t == 1.0))
            .count();
        let acc_ref = 1.0 - wrong as f64 / b as f64;
        let e4 = (acc - acc_ref).abs();
        if e4 >= tol {
            failures.push(format!("case {case} accuracy: {acc} vs reference {acc_ref}"));
        }
        max_err = max_err.max(e1).max(e2).max(e3).max(e4);
    }
    Ok(SuiteReport {
        name: "metrics".to_string(),
        cases: cases + 1,
        max_err,
        failures,
    })
}

pub const SUITE_NAMES: [&str; 4] = ["chebyshev", "laplacian", "gradients", "metrics"];

/// Runs one named suite at its standard size.
pub fn run_suite(name: &str) -> Result<SuiteReport> {
    match name {
        "chebyshev" => suite_chebyshev(100),
        "laplacian" => suite_laplacian(50),
        "gradients" => suite_gradients(),
        "metrics" => suite_metrics(200),
        _ => Err(Error::validation(format!(
            "unknown suite {name}; available: {}",
            SUITE_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_values_recurrence() {
        // T_0..T_4 at 0.5: 1, 0.5, -0.5, -1, -0.5.
        let v = chebyshev_values(0.5, 5);
        assert_eq!(v, vec![1.0, 0.5, -0.5, -1.0, -0.5]);
        // |T_k(x)| <= 1 on [-1, 1].
        for i in 0..=20 {
            let x = -1.0 + 0.1 * i as f64;
            for t in chebyshev_values(x, 8) {
                assert!(t.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn spectral_reference_agrees_on_identity_filter() {
        // theta_0 = I, single term: output must equal input.
        let g = build_graph(&GraphConfig::new(5, 2, 0.0075)).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.2 - 1.0);
        let eye = DMatrix::identity(3, 3);
        let out = cheb_filter_spectral(&g.scaled_laplacian, &x, &[eye]).unwrap();
        assert!((out - x).abs().max() < 1e-12);
    }

    #[test]
    fn pairwise_auroc_matches_frozen_case() {
        let got = auroc_pairwise(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0])
            .unwrap()
            .unwrap();
        assert_eq!(got, 0.75);
    }

    #[test]
    fn counting_ap_handles_ties_like_stable_sort() {
        let scores = [0.5, 0.5, 0.2, 0.5];
        let targets = [0.0, 1.0, 1.0, 1.0];
        let a = metrics::average_precision(&scores, &targets).unwrap();
        let b = average_precision_by_counting(&scores, &targets).unwrap();
        assert!((a.unwrap() - b.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn small_suites_pass() {
        let r = suite_chebyshev(10).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
        let r = suite_laplacian(10).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
        let r = suite_metrics(25).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope").is_err());
    }
}
