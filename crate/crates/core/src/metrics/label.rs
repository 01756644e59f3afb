//! Metrics built on label co-occurrence: NumC, NCE, LEEP and N-LEEP.

use nalgebra::DMatrix;

use crate::bundle::EmbeddingBundle;
use crate::numerics::{gmm_fit, pca_project, GmmConfig};

use super::MetricError;

/// Inverse class count.
pub fn num_c(bundle: &EmbeddingBundle) -> f64 {
    1.0 / bundle.num_classes() as f64
}

fn predictions(bundle: &EmbeddingBundle) -> Result<(usize, &[f32]), MetricError> {
    bundle
        .predictions()
        .map(|p| (bundle.num_source_classes(), p))
        .ok_or(MetricError::MissingPredictions)
}

/// Negative conditional entropy `-H(Y | Z)` of target labels given the
/// arg-max source label.
pub fn nce(bundle: &EmbeddingBundle) -> Result<f64, MetricError> {
    let (z, preds) = predictions(bundle)?;
    let pseudo: Vec<usize> = preds
        .chunks_exact(z)
        .map(|row| {
            // First maximum wins.
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(nce_from_pairs(&pseudo, bundle.labels(), z, bundle.num_classes()))
}

/// NCE from explicit `(source, target)` label pairs.
pub fn nce_from_pairs(source: &[usize], target: &[u32], z: usize, c: usize) -> f64 {
    let n = source.len() as f64;
    let mut joint = vec![0usize; z * c];
    let mut marginal = vec![0usize; z];
    for (&s, &t) in source.iter().zip(target) {
        joint[s * c + t as usize] += 1;
        marginal[s] += 1;
    }
    let mut value = 0.0;
    for s in 0..z {
        for t in 0..c {
            let k = joint[s * c + t];
            if k > 0 {
                value += k as f64 / n * (k as f64 / marginal[s] as f64).ln();
            }
        }
    }
    value
}

/// Log expected empirical prediction over the bundle's source predictions.
pub fn leep(bundle: &EmbeddingBundle) -> Result<f64, MetricError> {
    let (z, preds) = predictions(bundle)?;
    let theta = DMatrix::from_fn(bundle.n(), z, |i, k| preds[i * z + k] as f64);
    Ok(leep_soft(&theta, bundle.labels(), bundle.num_classes()))
}

/// LEEP for an arbitrary `n x Z` soft assignment matrix.
pub fn leep_soft(theta: &DMatrix<f64>, labels: &[u32], c: usize) -> f64 {
    let (n, z) = theta.shape();
    let mut joint = DMatrix::<f64>::zeros(c, z);
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..z {
            joint[(y as usize, k)] += theta[(i, k)];
        }
    }
    joint /= n as f64;
    let marginal: Vec<f64> = joint.column_iter().map(|col| col.sum()).collect();
    let mut conditional = joint;
    for (k, mut col) in conditional.column_iter_mut().enumerate() {
        if marginal[k] > 0.0 {
            col /= marginal[k];
        } else {
            col.fill(0.0);
        }
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p: f64 = (0..z).map(|k| conditional[(y as usize, k)] * theta[(i, k)]).sum();
            p.ln()
        })
        .sum();
    total / n as f64
}

#[derive(Debug, Clone)]
pub struct NleepConfig {
    /// Mixture size; `None` uses the class count.
    pub components: Option<usize>,
    pub pca_energy: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NleepConfig {
    fn default() -> Self {
        Self {
            components: None,
            pca_energy: 0.8,
            restarts: 1,
            seed: 0,
        }
    }
}

/// LEEP computed against Gaussian-mixture responsibilities fitted on the
/// PCA-reduced features instead of source-head predictions.
pub fn nleep(bundle: &EmbeddingBundle, cfg: &NleepConfig) -> Result<f64, MetricError> {
    let k = cfg.components.unwrap_or(bundle.num_classes());
    if bundle.n() < k {
        return Err(MetricError::TooFewSamples {
            needed: k,
            got: bundle.n(),
        });
    }
    let reduced = pca_project(&bundle.feature_matrix(), cfg.pca_energy)?;
    let mut gmm_cfg = GmmConfig::new(k, cfg.seed);
    gmm_cfg.restarts = cfg.restarts;
    let model = gmm_fit(&reduced, &gmm_cfg)?;
    let (resp, _) = model.responsibilities(&reduced);
    Ok(leep_soft(&resp, bundle.labels(), bundle.num_classes()))
}
