//! Weighted sequence graph over slice triplets.
//!
//! Nodes are consecutive slice groups along the scan axis; node i and j
//! are connected when their index distance is at most the receptive field
//! q, with weight 1 + 1/(1 + c * |i-j| * s_z) where s_z is the physical
//! slice spacing in decimeters and c defaults to 3. The graph operator fed
//! to the encoder is the rescaled Laplacian 2L/lambda_max - I, whose
//! spectrum lies in [-1, 1].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Node count above which the dominant eigenvalue is found by power
/// iteration instead of a dense symmetric eigendecomposition.
pub const DENSE_EIG_LIMIT: usize = 512;

const POWER_MAX_ITERS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Edges between nodes at index distance 1..=q.
    Banded,
    /// Every node pair connected; distance weighting still applies.
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// 1 + 1/(1 + c * |i-j| * s_z); self loops weigh 2.
    Distance,
    /// All present edges weigh 1, for ablating the distance prior.
    Unit,
}

fn default_distance_factor() -> f64 {
    3.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphConfig {
    /// Number of nodes N (slice triplets).
    pub nodes: usize,
    /// Receptive field q: maximum index distance with an edge.
    pub receptive_field: usize,
    /// Physical spacing between adjacent slices, in decimeters.
    pub spacing_dm: f64,
    #[serde(default)]
    pub include_self_loops: bool,
    #[serde(default = "GraphConfig::default_topology")]
    pub topology: Topology,
    #[serde(default = "GraphConfig::default_weight_scheme")]
    pub weight_scheme: WeightScheme,
    /// The constant c in the edge-weight decay.
    #[serde(default = "default_distance_factor")]
    pub distance_factor: f64,
    /// When false, lambda_max is recomputed instead of being reused from a
    /// previously built graph with identical settings.
    #[serde(default = "default_true", skip_serializing)]
    pub cache_lambda_max: bool,
}

impl GraphConfig {
    fn default_topology() -> Topology {
        Topology::Banded
    }
    fn default_weight_scheme() -> WeightScheme {
        WeightScheme::Distance
    }

    pub fn new(nodes: usize, receptive_field: usize, spacing_dm: f64) -> Self {
        GraphConfig {
            nodes,
            receptive_field,
            spacing_dm,
            include_self_loops: false,
            topology: Topology::Banded,
            weight_scheme: WeightScheme::Distance,
            distance_factor: default_distance_factor(),
            cache_lambda_max: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::validation(format!(
                "graph needs at least 2 nodes, got {}",
                self.nodes
            )));
        }
        if self.receptive_field < 1 {
            return Err(Error::validation("receptive field must be >= 1".to_string()));
        }
        if !(self.spacing_dm > 0.0) || !self.spacing_dm.is_finite() {
            return Err(Error::validation(format!(
                "slice spacing must be positive and finite, got {}",
                self.spacing_dm
            )));
        }
        if !(self.distance_factor > 0.0) || !self.distance_factor.is_finite() {
            return Err(Error::validation(format!(
                "distance factor must be positive and finite, got {}",
                self.distance_factor
            )));
        }
        Ok(())
    }

    /// Receptive field actually applied: N-1 for the fully connected
    /// topology.
    pub fn effective_receptive_field(&self) -> usize {
        match self.topology {
            Topology::Banded => self.receptive_field.min(self.nodes - 1),
            Topology::FullyConnected => self.nodes - 1,
        }
    }

    /// Off-diagonal edge count: q*N - q(q+1)/2 for q <= N-1.
    pub fn expected_edge_count(&self) -> usize {
        let n = self.nodes;
        let q = self.effective_receptive_field();
        q * n - q * (q + 1) / 2
    }
}

/// Edge weight between nodes at index distance |i - j|.
/// Distance 0 (a self loop) yields exactly 2.
pub fn edge_weight(i: usize, j: usize, spacing_dm: f64, distance_factor: f64) -> Result<f64> {
    if !(spacing_dm > 0.0) || !spacing_dm.is_finite() {
        return Err(Error::validation(format!(
            "slice spacing must be positive and finite, got {spacing_dm}"
        )));
    }
    if !(distance_factor > 0.0) || !distance_factor.is_finite() {
        return Err(Error::validation(format!(
            "distance factor must be positive and finite, got {distance_factor}"
        )));
    }
    let dist = i.abs_diff(j) as f64;
    Ok(1.0 + 1.0 / (1.0 + distance_factor * dist * spacing_dm))
}

/// Undirected edge list for a config: pairs (i, j) with i < j, ascending,
/// followed by self loops (i, i) when enabled.
pub fn build_edges(config: &GraphConfig) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    let n = config.nodes;
    let q = config.effective_receptive_field();
    let mut edges = Vec::with_capacity(config.expected_edge_count() + n);
    for i in 0..n {
        for j in (i + 1)..n.min(i + q + 1) {
            edges.push((i, j));
        }
    }
    if config.include_self_loops {
        for i in 0..n {
            edges.push((i, i));
        }
    }
    Ok(edges)
}

/// A built graph: adjacency, degrees, Laplacian, and the rescaled
/// Laplacian ready for spectral filtering.
#[derive(Debug, Clone)]
pub struct SliceGraph {
    pub config: GraphConfig,
    /// (i, j) pairs with i < j, plus (i, i) self loops when enabled.
    pub edges: Vec<(usize, usize)>,
    /// Weight of each entry in `edges`.
    pub weights: Vec<f64>,
    pub adjacency: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub lambda_max: f64,
    pub scaled_laplacian: DMatrix<f64>,
}

impl SliceGraph {
    pub fn node_count(&self) -> usize {
        self.config.nodes
    }

    /// Count of off-diagonal undirected edges (self loops excluded).
    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|(i, j)| i != j).count()
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.degrees)
    }

    /// Hop distances from `start` over the unweighted edge set.
    pub fn hop_distances(&self, start: usize) -> Result<Vec<Option<usize>>> {
        let n = self.node_count();
        if start >= n {
            return Err(Error::index(format!("start node {start} >= {n}")));
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &self.edges {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut dist = vec![None; n];
        dist[start] = Some(0);
        let mut frontier = std::collections::VecDeque::from([start]);
        while let Some(u) = frontier.pop_front() {
            let du = dist[u].unwrap();
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    frontier.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Rescaled Laplacian as a model-precision tensor (constant; never
    /// differentiated).
    pub fn scaled_laplacian_tensor<F: Scalar>(&self) -> Tensor<F> {
        let n = self.node_count();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(F::from_f64(self.scaled_laplacian[(i, j)]));
            }
        }
        Tensor::new(vec![n, n], data).expect("square matrix buffer")
    }

    /// Adjacency as a model-precision tensor.
    pub fn adjacency_tensor<F: Scalar>(&self) -> Tensor<F> {
        let n = self.node_count();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(F::from_f64(self.adjacency[(i, j)]));
            }
        }
        Tensor::new(vec![n, n], data).expect("square matrix buffer")
    }

    /// JSON description of the built graph for inspection alongside run
    /// outputs.
    pub fn export_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .zip(&self.weights)
            .map(|(&(i, j), &w)| serde_json::json!([i, j, w]))
            .collect();
        serde_json::json!({
            "nodes": self.config.nodes,
            "receptive_field": self.config.effective_receptive_field(),
            "spacing_dm": self.config.spacing_dm,
            "include_self_loops": self.config.include_self_loops,
            "topology": self.config.topology,
            "weight_scheme": self.config.weight_scheme,
            "distance_factor": self.config.distance_factor,
            "lambda_max": self.lambda_max,
            "edge_count": self.edge_count(),
            "edges": edges,
        })
    }
}

/// Builds the graph, its Laplacian, and the rescaled operator.
pub fn build_graph(config: &GraphConfig) -> Result<SliceGraph> {
    let edges = build_edges(config)?;
    let n = config.nodes;
    let mut weights = Vec::with_capacity(edges.len());
    for &(i, j) in &edges {
        let w = match config.weight_scheme {
            WeightScheme::Distance => {
                edge_weight(i, j, config.spacing_dm, config.distance_factor)?
            }
            WeightScheme::Unit => 1.0,
        };
        weights.push(w);
    }

    let mut adjacency = DMatrix::zeros(n, n);
    for (&(i, j), &w) in edges.iter().zip(&weights) {
        if i == j {
            adjacency[(i, i)] = w;
        } else {
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
        }
    }

    // Self loops contribute to the degree but cancel in L = D - A only
    // off the diagonal; the Laplacian itself is self-loop invariant, which
    // the test battery checks explicitly.
    let degrees = DVector::from_fn(n, |i, _| adjacency.row(i).sum());
    let laplacian = DMatrix::from_diagonal(&degrees) - &adjacency;

    let lambda_max = lambda_max(&laplacian)?;
    if lambda_max <= 1e-12 {
        return Err(Error::numeric(format!(
            "largest Laplacian eigenvalue {lambda_max} is not positive; graph has no edges?"
        )));
    }
    let mut scaled_laplacian = laplacian.clone() * (2.0 / lambda_max);
    for i in 0..n {
        scaled_laplacian[(i, i)] -= 1.0;
    }

    Ok(SliceGraph {
        config: config.clone(),
        edges,
        weights,
        adjacency,
        degrees,
        laplacian,
        lambda_max,
        scaled_laplacian,
    })
}

/// Largest eigenvalue of a symmetric PSD matrix. Dense decomposition up to
/// [`DENSE_EIG_LIMIT`] nodes, then shifted power iteration.
pub fn lambda_max(l: &DMatrix<f64>) -> Result<f64> {
    if l.nrows() != l.ncols() {
        return Err(Error::dimension(format!(
            "lambda_max: matrix is {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    if l.nrows() <= DENSE_EIG_LIMIT {
        lambda_max_dense(l)
    } else {
        lambda_max_power(l, POWER_REL_TOL, POWER_MAX_ITERS)
    }
}

/// Largest eigenvalue by symmetric eigendecomposition.
pub fn lambda_max_dense(l: &DMatrix<f64>) -> Result<f64> {
    let eig = l.clone().symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| {
            Some(match acc {
                Some(a) => a.max(v),
                None => v,
            })
        })
        .ok_or_else(|| Error::dimension("lambda_max: empty matrix".to_string()))
}

/// Largest eigenvalue by power iteration with a spectrum-splitting shift.
///
/// A first unshifted pass estimates the dominant eigenvalue, then the
/// iteration runs on L - (estimate/2) I, which doubles the effective gap
/// for PSD spectra. Convergence is declared when the residual
/// ||L v - rho v|| drops below `rel_tol * max(1, |rho|)`, with rho the
/// Rayleigh quotient on the original matrix.
pub fn lambda_max_power(l: &DMatrix<f64>, rel_tol: f64, max_iters: usize) -> Result<f64> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::dimension(format!(
            "lambda_max: matrix is {}x{}",
            n,
            l.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::dimension("lambda_max: empty matrix".to_string()));
    }
    // Deterministic start vector with no special symmetry.
    let mut v = DVector::from_fn(n, |i, _| {
        let x = crate::util::splitmix64(i as u64 ^ 0x5eed);
        (x >> 11) as f64 / (1u64 << 53) as f64 + 0.25
    });
    v /= v.norm();

    let estimate_iters = 100.min(max_iters / 2).max(1);
    for _ in 0..estimate_iters {
        let w = l * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Err(Error::numeric(
                "power iteration collapsed to the null space".to_string(),
            ));
        }
        v = w / norm;
    }
    let estimate = (l * &v).dot(&v);

    // Shift so the target eigenvalue dominates the (PSD) spectrum by a
    // wider margin: eigenvalues map to mu - shift, and the smallest ones
    // map near -shift.
    let shift = 0.5 * estimate;
    let mut rho = estimate;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut w = l * &v;
        w.axpy(-shift, &v, 1.0);
        let norm = w.norm();
        if norm == 0.0 {
            return Err(Error::numeric(
                "power iteration collapsed to the null space".to_string(),
            ));
        }
        v = w / norm;
        let lv = l * &v;
        rho = lv.dot(&v);
        residual = (lv - rho * &v).norm();
        if residual <= rel_tol * rho.abs().max(1.0) {
            return Ok(rho);
        }
    }
    Err(Error::numeric(format!(
        "power iteration did not converge in {max_iters} iterations; residual {residual:.3e} \
         exceeds {:.3e} (estimate {rho:.6})",
        rel_tol * rho.abs().max(1.0)
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_weight_frozen_values() {
        // Distance 0.
        assert_eq!(edge_weight(5, 5, 0.0075, 3.0).unwrap(), 2.0);
        // Distance 1 at 0.75 mm spacing: 1 + 1/(1 + 0.0225).
        let w = edge_weight(1, 0, 0.0075, 3.0).unwrap();
        assert!((w - 1.9779951100244499).abs() < 1e-15, "w = {w}");
        // Symmetry in the arguments.
        assert_eq!(
            edge_weight(2, 9, 0.0075, 3.0).unwrap(),
            edge_weight(9, 2, 0.0075, 3.0).unwrap()
        );
        assert!(edge_weight(0, 1, 0.0, 3.0).is_err());
        assert!(edge_weight(0, 1, -1.0, 3.0).is_err());
        assert!(edge_weight(0, 1, 0.0075, 0.0).is_err());
    }

    #[test]
    fn edge_weight_decreases_with_distance() {
        let mut prev = edge_weight(0, 0, 0.0075, 3.0).unwrap();
        for d in 1..100 {
            let w = edge_weight(0, d, 0.0075, 3.0).unwrap();
            assert!(w < prev, "not strictly decreasing at distance {d}");
            assert!(w > 1.0 && w <= 2.0);
            prev = w;
        }
    }

    #[test]
    fn edge_list_matches_count_formula() {
        for (n, q) in [(8, 2), (8, 7), (80, 16), (5, 1), (12, 20)] {
            let cfg = GraphConfig::new(n, q, 0.0075);
            let edges = build_edges(&cfg).unwrap();
            assert_eq!(
                edges.len(),
                cfg.expected_edge_count(),
                "count mismatch for n={n} q={q}"
            );
            for &(i, j) in &edges {
                assert!(i < j);
                assert!(j - i <= cfg.effective_receptive_field());
            }
        }
    }

    #[test]
    fn fully_connected_edge_count() {
        let mut cfg = GraphConfig::new(80, 16, 0.0075);
        cfg.topology = Topology::FullyConnected;
        assert_eq!(cfg.expected_edge_count(), 80 * 79 / 2);
        assert_eq!(build_edges(&cfg).unwrap().len(), 3160);
    }

    #[test]
    fn reference_scale_graph() {
        // 80 nodes, q = 16, 0.75 mm spacing.
        let cfg = GraphConfig::new(80, 16, 0.0075);
        let g = build_graph(&cfg).unwrap();
        assert_eq!(g.edge_count(), 1144);
        assert!((g.lambda_max - 70.02870528747107).abs() < 1e-9);
        // Scaled spectrum within [-1, 1].
        let eig = g.scaled_laplacian.clone().symmetric_eigen();
        for v in eig.eigenvalues.iter() {
            assert!(*v >= -1.0 - 1e-9 && *v <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn two_node_graph_closed_form() {
        // L = [[w, -w], [-w, w]], lambda_max = 2w, scaled L = [[0,-1],[-1,0]].
        let cfg = GraphConfig::new(2, 1, 0.0075);
        let g = build_graph(&cfg).unwrap();
        let w = edge_weight(0, 1, 0.0075, 3.0).unwrap();
        assert!((g.lambda_max - 2.0 * w).abs() < 1e-12);
        assert!(g.scaled_laplacian[(0, 0)].abs() < 1e-15);
        assert!((g.scaled_laplacian[(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_without_self_loops() {
        let cfg = GraphConfig::new(17, 4, 0.01);
        let g = build_graph(&cfg).unwrap();
        for i in 0..17 {
            assert!(g.laplacian.row(i).sum().abs() < 1e-12);
        }
        // Symmetry is exact by construction.
        for i in 0..17 {
            for j in 0..17 {
                assert_eq!(g.adjacency[(i, j)], g.adjacency[(j, i)]);
            }
        }
    }

    #[test]
    fn self_loops_leave_laplacian_unchanged() {
        let base = GraphConfig::new(11, 3, 0.0075);
        let with = GraphConfig {
            include_self_loops: true,
            ..base.clone()
        };
        let g0 = build_graph(&base).unwrap();
        let g1 = build_graph(&with).unwrap();
        let diff = (&g0.laplacian - &g1.laplacian).abs().max();
        assert!(diff < 1e-12);
        // Degrees do shift by the loop weight 2.
        assert!((g1.degrees[0] - g0.degrees[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_build_combinatorial_laplacian() {
        let mut cfg = GraphConfig::new(6, 1, 0.0075);
        cfg.weight_scheme = WeightScheme::Unit;
        let g = build_graph(&cfg).unwrap();
        assert_eq!(g.adjacency[(0, 1)], 1.0);
        assert_eq!(g.degrees[1], 2.0);
    }

    #[test]
    fn power_iteration_matches_dense() {
        let cfg = GraphConfig::new(80, 16, 0.0075);
        let g = build_graph(&cfg).unwrap();
        let dense = lambda_max_dense(&g.laplacian).unwrap();
        let power = lambda_max_power(&g.laplacian, 1e-10, 10_000).unwrap();
        assert!(
            (dense - power).abs() / dense < 1e-9,
            "dense {dense} vs power {power}"
        );
    }

    #[test]
    fn hop_distances_follow_band() {
        let cfg = GraphConfig::new(9, 2, 0.0075);
        let g = build_graph(&cfg).unwrap();
        let d = g.hop_distances(0).unwrap();
        assert_eq!(d[0], Some(0));
        assert_eq!(d[1], Some(1));
        assert_eq!(d[2], Some(1));
        assert_eq!(d[3], Some(2));
        assert_eq!(d[8], Some(4));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(build_graph(&GraphConfig::new(1, 1, 0.0075)).is_err());
        assert!(build_graph(&GraphConfig::new(8, 0, 0.0075)).is_err());
        assert!(build_graph(&GraphConfig::new(8, 2, 0.0)).is_err());
        assert!(build_graph(&GraphConfig::new(8, 2, f64::NAN)).is_err());
    }

    #[test]
    fn export_json_lists_edges() {
        let cfg = GraphConfig::new(4, 1, 0.0075);
        let g = build_graph(&cfg).unwrap();
        let j = g.export_json();
        assert_eq!(j["nodes"], 4);
        assert_eq!(j["edges"].as_array().unwrap().len(), 3);
        assert!(j["lambda_max"].as_f64().unwrap() > 0.0);
    }
}
