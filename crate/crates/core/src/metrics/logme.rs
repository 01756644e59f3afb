//! LogME: per-sample log marginal evidence of a Bayesian linear model on the
//! features, maximized over the prior precision `alpha` and noise precision
//! `beta` by fixed-point iteration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bundle::EmbeddingBundle;
use crate::numerics::{center_columns, symmetrize};

use super::MetricError;

/// Precisions are kept inside this range so degenerate targets stay finite.
const PRECISION_RANGE: (f64, f64) = (1e-12, 1e12);

#[derive(Debug, Clone)]
pub struct LogMeConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogMeConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMeResult {
    pub value: f64,
    /// False when any class hit `max_iter` before converging.
    pub converged: bool,
}

/// Spectral view of a centered `n x d` feature matrix: nonzero eigenvalues
/// `s_i` of `F^T F` with left singular vectors `u_i`.
pub struct FeatureSpectrum {
    n: usize,
    d: usize,
    s: Vec<f64>,
    /// `n x r` orthonormal columns.
    u: DMatrix<f64>,
}

impl FeatureSpectrum {
    pub fn new(f: &DMatrix<f64>) -> Self {
        let (n, d) = f.shape();
        let (s, u) = if n >= d {
            let mut ftf = f.tr_mul(f);
            symmetrize(&mut ftf);
            let eig = SymmetricEigen::new(ftf);
            let top = eig.eigenvalues.amax();
            let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
            let s: Vec<f64> = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
            // u_i = F v_i / sigma_i
            let v = DMatrix::from_fn(d, keep.len(), |j, k| eig.eigenvectors[(j, keep[k])]);
            let mut u = f * v;
            for (k, mut col) in u.column_iter_mut().enumerate() {
                col /= s[k].sqrt();
            }
            (s, u)
        } else {
            let mut gram = f * f.transpose();
            symmetrize(&mut gram);
            let eig = SymmetricEigen::new(gram);
            let top = eig.eigenvalues.amax();
            let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
            let s = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
            let u = DMatrix::from_fn(n, keep.len(), |i, k| eig.eigenvectors[(i, keep[k])]);
            (s, u)
        };
        Self { n, d, s, u }
    }

    /// Maximized log evidence for target `y` and the `(alpha, beta)` reached.
    pub fn evidence(&self, y: &DVector<f64>, cfg: &LogMeConfig) -> (f64, f64, f64, bool) {
        let x = self.u.tr_mul(y);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y_perp = (y.norm_squared() - x2.iter().sum::<f64>()).max(0.0);
        let n = self.n as f64;
        let clamp = |v: f64| v.clamp(PRECISION_RANGE.0, PRECISION_RANGE.1);

        let stats = |alpha: f64, beta: f64| {
            let mut gamma = 0.0;
            let mut m2 = 0.0;
            let mut res2 = y_perp;
            for (&s, &q) in self.s.iter().zip(&x2) {
                let denom = alpha + beta * s;
                gamma += beta * s / denom;
                m2 += beta * beta * s * q / (denom * denom);
                res2 += alpha * alpha * q / (denom * denom);
            }
            (gamma, m2, res2)
        };

        let (mut alpha, mut beta) = (1.0, 1.0);
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            let (gamma, m2, res2) = stats(alpha, beta);
            let next_alpha = clamp(gamma / m2.max(f64::MIN_POSITIVE));
            let next_beta = clamp((n - gamma) / res2.max(f64::MIN_POSITIVE));
            let ratio = alpha / beta;
            let next_ratio = next_alpha / next_beta;
            alpha = next_alpha;
            beta = next_beta;
            if (next_ratio - ratio).abs() <= cfg.tol * ratio {
                converged = true;
                break;
            }
        }
        (self.log_evidence(&x2, y_perp, alpha, beta), alpha, beta, converged)
    }

    fn log_evidence(&self, x2: &[f64], y_perp: f64, alpha: f64, beta: f64) -> f64 {
        let n = self.n as f64;
        let d = self.d as f64;
        let mut m2 = 0.0;
        let mut res2 = y_perp;
        let mut logdet = (self.d - self.s.len()) as f64 * alpha.ln();
        for (&s, &q) in self.s.iter().zip(x2) {
            let denom = alpha + beta * s;
            m2 += beta * beta * s * q / (denom * denom);
            res2 += alpha * alpha * q / (denom * denom);
            logdet += denom.ln();
        }
        0.5 * n * beta.ln() + 0.5 * d * alpha.ln() - 0.5 * n * (2.0 * PI).ln()
            - 0.5 * beta * res2
            - 0.5 * alpha * m2
            - 0.5 * logdet
    }
}

/// Mean over classes of the per-sample maximized evidence for the
/// one-vs-all indicator target of that class.
pub fn logme(bundle: &EmbeddingBundle, cfg: &LogMeConfig) -> Result<LogMeResult, MetricError> {
    let n = bundle.n();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let c = bundle.num_classes();
    if c < 2 {
        return Err(MetricError::TooFewClasses { needed: 2, got: c });
    }
    let f = center_columns(&bundle.feature_matrix());
    let spectrum = FeatureSpectrum::new(&f);
    let mut total = 0.0;
    let mut converged = true;
    for class in 0..c as u32 {
        let y = DVector::from_iterator(n, bundle.labels().iter().map(|&l| (l == class) as u8 as f64));
        let (ev, _, _, ok) = spectrum.evidence(&y, cfg);
        total += ev / n as f64;
        converged &= ok;
    }
    Ok(LogMeResult {
        value: total / c as f64,
        converged,
    })
}
