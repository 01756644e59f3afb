//! Diagonal-covariance Gaussian mixtures fitted by EM.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::check_finite;
use super::NumericsError;

/// Responsibility mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Relative log-likelihood improvement that counts as converged.
    pub tol: f64,
    /// Floor on every variance entry.
    pub var_floor: f64,
    /// Independent k-means++ restarts; the best likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            max_iter: 100,
            tol: 1e-6,
            var_floor: 1e-6,
            restarts: 1,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `K x d` component means.
    pub means: DMatrix<f64>,
    /// `K x d` diagonal variances.
    pub variances: DMatrix<f64>,
    /// Mean per-sample log-likelihood after each E-step.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Final mean per-sample log-likelihood of the training data.
    pub fn log_likelihood(&self) -> f64 {
        *self.history.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// `n x K` joint log-densities `ln w_k + ln N(x_i | k)`.
    fn joint_log_density(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.components();
        let d = x.ncols();
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                let logvar: f64 = (0..d).map(|j| (2.0 * PI * self.variances[(c, j)]).ln()).sum();
                self.weights[c].ln() - 0.5 * logvar
            })
            .collect();
        DMatrix::from_fn(x.nrows(), k, |i, c| {
            let mut q = 0.0;
            for j in 0..d {
                let diff = x[(i, j)] - self.means[(c, j)];
                q += diff * diff / self.variances[(c, j)];
            }
            consts[c] - 0.5 * q
        })
    }

    /// Posterior responsibilities (`n x K`, rows sum to one) and the mean
    /// per-sample log-likelihood.
    pub fn responsibilities(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let mut lp = self.joint_log_density(x);
        let mut total = 0.0;
        for i in 0..lp.nrows() {
            let mut row = lp.row_mut(i);
            let max = row.max();
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse;
            row.apply(|v| *v = (*v - lse).exp());
        }
        let n = x.nrows().max(1) as f64;
        (lp, total / n)
    }
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut best = vec![f64::INFINITY; n];
    for c in 1..k {
        for (i, b) in best.iter_mut().enumerate() {
            let dist = (x.row(i) - centers.row(c - 1)).norm_squared();
            *b = b.min(dist);
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if target < b {
                    chosen = i;
                    break;
                }
                target -= b;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
    }
    centers
}

fn fit_once(x: &DMatrix<f64>, cfg: &GmmConfig, seed: u64) -> Result<GmmModel, NumericsError> {
    let (n, d) = x.shape();
    let k = cfg.components;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = kmeans_pp(x, k, &mut rng);
    let global: Vec<f64> = (0..d)
        .map(|j| {
            let col = x.column(j);
            let mu = col.mean();
            (col.map(|v| (v - mu) * (v - mu)).sum() / n as f64).max(cfg.var_floor)
        })
        .collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        variances: DMatrix::from_fn(k, d, |_, j| global[j]),
        history: Vec::new(),
        converged: false,
    };
    let (mut resp, mut ll) = model.responsibilities(x);
    model.history.push(ll);
    for _ in 0..cfg.max_iter {
        // M-step; clamping variances at the floor is the constrained maximizer,
        // so the likelihood still cannot decrease.
        let mass: Vec<f64> = resp.column_iter().map(|c| c.sum()).collect();
        if let Some(c) = mass.iter().position(|&m| m < EMPTY_MASS) {
            return Err(NumericsError::EmptyComponent(c));
        }
        let means = DMatrix::from_fn(k, d, |c, j| {
            (0..n).map(|i| resp[(i, c)] * x[(i, j)]).sum::<f64>() / mass[c]
        });
        let variances = DMatrix::from_fn(k, d, |c, j| {
            let m = means[(c, j)];
            let s: f64 = (0..n)
                .map(|i| {
                    let diff = x[(i, j)] - m;
                    resp[(i, c)] * diff * diff
                })
                .sum();
            (s / mass[c]).max(cfg.var_floor)
        });
        model.weights = mass.iter().map(|m| m / n as f64).collect();
        model.means = means;
        model.variances = variances;

        let prev = ll;
        (resp, ll) = model.responsibilities(x);
        model.history.push(ll);
        if (ll - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
            model.converged = true;
            break;
        }
    }
    Ok(model)
}

/// Fits a `K`-component diagonal GMM with seeded k-means++ initialization.
pub fn gmm_fit(x: &DMatrix<f64>, cfg: &GmmConfig) -> Result<GmmModel, NumericsError> {
    let n = x.nrows();
    if cfg.components == 0 || n < cfg.components {
        return Err(NumericsError::TooFewSamples {
            needed: cfg.components.max(1),
            got: n,
        });
    }
    check_finite(x)?;
    let mut best: Option<GmmModel> = None;
    let mut last_err = None;
    for r in 0..cfg.restarts.max(1) {
        let seed = cfg.seed.wrapping_add(r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match fit_once(x, cfg, seed) {
            Ok(m) => {
                if best.as_ref().is_none_or(|b| m.log_likelihood() > b.log_likelihood()) {
                    best = Some(m);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}
