//! Heat-kernel traces of k-NN graph Laplacians by stochastic Lanczos quadrature.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::check_finite;
use super::NumericsError;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatTraceConfig {
    pub graph_k: usize,
    pub t_grid: Vec<f64>,
    pub lanczos_steps: usize,
    pub probes: usize,
    pub seed: u64,
}

impl Default for HeatTraceConfig {
    fn default() -> Self {
        Self {
            graph_k: 5,
            t_grid: log_grid(0.1, 10.0, 32),
            lanczos_steps: 10,
            probes: 16,
            seed: 0,
        }
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Symmetrized, unweighted k-NN graph under Euclidean distance, as sorted
/// adjacency lists. Distance ties go to the lower index.
pub fn knn_graph(x: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    let sq: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let gram = x * x.transpose();
    let mut adj = vec![Vec::new(); n];
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                let dist = (sq[i] + sq[j] - 2.0 * gram[(i, j)]).max(0.0);
                cand.push((dist, j));
            }
        }
        let kk = k.min(cand.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if kk < cand.len() {
            cand.select_nth_unstable_by(kk, cmp);
        }
        for &(_, j) in &cand[..kk] {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Normalized Laplacian `I - D^{-1/2} A D^{-1/2}` as a matrix-free operator.
pub struct NormalizedLaplacian {
    adj: Vec<Vec<usize>>,
    inv_sqrt_deg: Vec<f64>,
}

impl NormalizedLaplacian {
    pub fn new(adj: Vec<Vec<usize>>) -> Self {
        let inv_sqrt_deg = adj
            .iter()
            .map(|a| if a.is_empty() { 0.0 } else { 1.0 / (a.len() as f64).sqrt() })
            .collect();
        Self { adj, inv_sqrt_deg }
    }

    pub fn dim(&self) -> usize {
        self.adj.len()
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, nbrs) in self.adj.iter().enumerate() {
            let s: f64 = nbrs.iter().map(|&j| self.inv_sqrt_deg[j] * v[j]).sum();
            out[i] = v[i] - self.inv_sqrt_deg[i] * s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::identity(n, n);
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &j in nbrs {
                m[(i, j)] -= self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j];
            }
        }
        m
    }
}

/// Gauss quadrature nodes and weights for `v^T f(L) v / |v|^2` from a
/// Lanczos run with full reorthogonalization.
fn lanczos_quadrature(op: &NormalizedLaplacian, start: &[f64], steps: usize) -> (Vec<f64>, Vec<f64>) {
    let n = op.dim();
    let norm = start.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / norm).collect()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for step in 0..steps.min(n) {
        op.apply(&basis[step], &mut w);
        let a: f64 = w.iter().zip(&basis[step]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for q in &basis {
            let c: f64 = w.iter().zip(q).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let b = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step + 1 == steps.min(n) || b < 1e-10 {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
    }
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    // The normalized Laplacian spectrum lies in [0, 2].
    let nodes = eig.eigenvalues.iter().map(|l| l.clamp(0.0, 2.0)).collect();
    let weights = (0..m).map(|j| eig.eigenvectors[(0, j)].powi(2)).collect();
    (nodes, weights)
}

/// Estimates `h(t) = tr(exp(-t L)) / n` for every `t` in the grid.
///
/// Rademacher probes are used when `probes < n`; otherwise the estimator
/// probes every basis vector and the trace is exact up to the Lanczos
/// truncation.
pub fn heat_trace(x: &DMatrix<f64>, cfg: &HeatTraceConfig) -> Result<Vec<f64>, NumericsError> {
    let n = x.nrows();
    if cfg.graph_k == 0 {
        return Err(NumericsError::InvalidInput("graph_k must be positive".into()));
    }
    if n < cfg.graph_k + 1 {
        return Err(NumericsError::TooFewSamples {
            needed: cfg.graph_k + 1,
            got: n,
        });
    }
    if cfg.t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(NumericsError::InvalidInput("heat times must be positive".into()));
    }
    if cfg.lanczos_steps == 0 || cfg.probes == 0 {
        return Err(NumericsError::InvalidInput(
            "lanczos_steps and probes must be positive".into(),
        ));
    }
    check_finite(x)?;
    let op = NormalizedLaplacian::new(knn_graph(x, cfg.graph_k));

    let exact = cfg.probes >= n;
    let probes: Vec<Vec<f64>> = if exact {
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..cfg.probes)
            .map(|_| (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect())
            .collect()
    };

    let mut h = vec![0.0; cfg.t_grid.len()];
    for v in &probes {
        let norm_sq: f64 = v.iter().map(|a| a * a).sum();
        let (nodes, weights) = lanczos_quadrature(&op, v, cfg.lanczos_steps);
        for (slot, &t) in h.iter_mut().zip(&cfg.t_grid) {
            let q: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(theta, w)| w * (-t * theta).exp())
                .sum();
            *slot += norm_sq * q;
        }
    }
    // Basis probes sum to the trace; Rademacher probes average to it.
    let scale = if exact { 1.0 } else { 1.0 / probes.len() as f64 };
    Ok(h.into_iter().map(|v| v * scale / n as f64).collect())
}
