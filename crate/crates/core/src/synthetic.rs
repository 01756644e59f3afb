//! Seeded synthetic bundles: Gaussian class clusters with optional
//! source-head predictions, and candidate pools with planted performance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::bundle::EmbeddingBundle;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Distance of every class centre from the origin, in units of the
    /// per-dimension noise.
    pub separation: f64,
    /// Source-head size; `None` emits no predictions.
    pub source_classes: Option<usize>,
    /// Softmax inverse temperature of the source head.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 600,
            d: 32,
            classes: 5,
            separation: 3.0,
            source_classes: Some(20),
            temperature: 1.0,
            seed: 0,
        }
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Balanced classes (`i % classes`) around random centres at distance
/// `separation`, plus unit Gaussian noise.
pub fn clustered(spec: &SyntheticSpec) -> EmbeddingBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d, c) = (spec.n, spec.d, spec.classes.max(1));
    let mut centres = gaussian(c, d, &mut rng);
    for mut row in centres.row_iter_mut() {
        let norm = row.norm();
        row *= spec.separation / norm;
    }
    let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    let noise = gaussian(n, d, &mut rng);
    let x = DMatrix::from_fn(n, d, |i, j| centres[(labels[i] as usize, j)] + noise[(i, j)]);
    let features: Vec<f32> = x.transpose().iter().map(|&v| v as f32).collect();
    let mut bundle = EmbeddingBundle::new(format!("synthetic-{}", spec.seed), d, features, labels, c)
        .expect("synthetic bundle is valid");
    if let Some(z) = spec.source_classes {
        let head = gaussian(z, d, &mut rng) / (d as f64).sqrt();
        let logits = &x * head.transpose() * spec.temperature;
        let mut preds = Vec::with_capacity(n * z);
        for row in logits.row_iter() {
            let top = row.max();
            let exp: Vec<f64> = row.iter().map(|v| (v - top).exp()).collect();
            let sum: f64 = exp.iter().sum();
            preds.extend(exp.iter().map(|v| (v / sum) as f32));
        }
        bundle = bundle.with_predictions(z, preds).expect("softmax rows are stochastic");
    }
    bundle
}

/// Isotropic noise with balanced labels: no feature carries label signal.
pub fn noise(n: usize, d: usize, classes: usize, seed: u64) -> EmbeddingBundle {
    clustered(&SyntheticSpec {
        n,
        d,
        classes,
        separation: 0.0,
        source_classes: None,
        temperature: 1.0,
        seed,
    })
}

/// A synthetic transfer candidate with its planted performance.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    pub bundle: EmbeddingBundle,
    pub separation: f64,
    pub perf_p: f64,
    pub perf_ri: f64,
}

/// `count` candidates whose separations are spread over
/// `[min_sep, max_sep]`. `perf_p` is a saturating
/// function of separation plus Gaussian noise of sd `perf_noise`.
pub fn candidate_pool(
    count: usize,
    base: &SyntheticSpec,
    min_sep: f64,
    max_sep: f64,
    perf_noise: f64,
    seed: u64,
) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, perf_noise.max(0.0)).expect("finite sd");
    (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let separation = min_sep + t * (max_sep - min_sep);
            let spec = SyntheticSpec {
                separation,
                seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
                ..base.clone()
            };
            let perf_p = (0.2 + 0.75 * (1.0 - (-separation / 2.0).exp()) + jitter.sample(&mut rng)).clamp(0.01, 1.0);
            let perf_ri = (0.15 + rng.random_range(-0.02f64..0.02)).min(perf_p);
            Candidate {
                id: format!("cand{i:02}"),
                bundle: clustered(&spec).with_name(format!("cand{i:02}")),
                separation,
                perf_p,
                perf_ri,
            }
        })
        .collect()
}
