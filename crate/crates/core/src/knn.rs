//! k-nearest-neighbor transferability: hold out part of the target set,
//! classify it by cosine similarity against the rest and report accuracy.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{split_train_eval, stratified_folds, EmbeddingBundle};
use crate::metrics::MetricError;

/// Queries scored per similarity block.
const QUERY_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnMode {
    Single,
    Cv3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    /// Share of samples in the reference part (single-split mode).
    pub fraction: f64,
    pub seed: u64,
    pub mode: KnnMode,
    pub stratified: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 200,
            fraction: 0.8,
            seed: 0,
            mode: KnnMode::Single,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    /// Accuracy in [0, 1].
    pub value: f64,
    /// Effective k when the reference set was smaller than requested.
    pub clamped_k: Option<usize>,
}

/// A neighbor of a query: reference row position and cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.index.cmp(&b.index))
}

/// L2-normalized features stored one sample per column.
pub struct UnitFeatures {
    columns: DMatrix<f64>,
}

impl UnitFeatures {
    pub fn new(bundle: &EmbeddingBundle) -> Result<Self, MetricError> {
        let (n, d) = (bundle.n(), bundle.d());
        let mut columns = DMatrix::<f64>::zeros(d, n);
        for i in 0..n {
            let row = bundle.row(i);
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(MetricError::ZeroNorm { index: i });
            }
            for (j, &v) in row.iter().enumerate() {
                columns[(j, i)] = v as f64 / norm;
            }
        }
        Ok(Self { columns })
    }

    /// For each query sample, its `k` most similar reference samples,
    /// ordered by similarity descending and then by position ascending.
    /// Neighbor indices are positions within `reference`.
    pub fn neighbors(&self, reference: &[usize], queries: &[usize], k: usize) -> Vec<Vec<Neighbor>> {
        let k = k.min(reference.len());
        let refs = self.columns.select_columns(reference);
        queries
            .par_chunks(QUERY_BLOCK)
            .flat_map_iter(|block| {
                let q = self.columns.select_columns(block);
                let sims = refs.tr_mul(&q);
                let out: Vec<Vec<Neighbor>> = sims
                    .column_iter()
                    .map(|col| {
                        let mut all: Vec<Neighbor> = col
                            .iter()
                            .enumerate()
                            .map(|(index, &similarity)| Neighbor { index, similarity })
                            .collect();
                        if k == 0 {
                            return Vec::new();
                        }
                        if k < all.len() {
                            all.select_nth_unstable_by(k - 1, rank_order);
                            all.truncate(k);
                        }
                        all.sort_unstable_by(rank_order);
                        all
                    })
                    .collect();
                out
            })
            .collect()
    }
}

/// Majority vote over `neighbors`; ties go to the class with the larger
/// summed similarity, then to the lower class index.
pub fn vote(neighbors: &[Neighbor], reference_labels: &[u32], num_classes: usize) -> u32 {
    let mut counts = vec![0usize; num_classes];
    let mut sims = vec![0.0f64; num_classes];
    for nb in neighbors {
        let c = reference_labels[nb.index] as usize;
        counts[c] += 1;
        sims[c] += nb.similarity;
    }
    let mut best = 0;
    for c in 1..num_classes {
        if counts[c] > counts[best] || (counts[c] == counts[best] && sims[c] > sims[best]) {
            best = c;
        }
    }
    best as u32
}

/// Reference/evaluation index pairs for the configured protocol.
fn partitions(bundle: &EmbeddingBundle, cfg: &KnnConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>, MetricError> {
    let n = bundle.n();
    match cfg.mode {
        KnnMode::Single => {
            let split = split_train_eval(bundle, cfg.fraction, cfg.seed, cfg.stratified)?;
            Ok(vec![(split.reference, split.eval)])
        }
        KnnMode::Cv3 => {
            if n < 3 {
                return Err(MetricError::TooFewSamples { needed: 3, got: n });
            }
            let folds = if cfg.stratified {
                stratified_folds(bundle.labels(), bundle.num_classes(), 3, cfg.seed)
            } else {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
                let mut folds = vec![Vec::new(); 3];
                for (pos, i) in order.into_iter().enumerate() {
                    folds[pos % 3].push(i);
                }
                folds.iter_mut().for_each(|f| f.sort_unstable());
                folds
            };
            Ok((0..3)
                .map(|f| {
                    let reference = (0..3)
                        .filter(|&g| g != f)
                        .flat_map(|g| folds[g].iter().copied())
                        .collect::<Vec<_>>();
                    let mut reference = reference;
                    reference.sort_unstable();
                    (reference, folds[f].clone())
                })
                .collect())
        }
    }
}

/// Accuracy for each of `k_values`, reusing one neighbor ranking per
/// partition so only the vote depth changes.
fn accuracies(bundle: &EmbeddingBundle, cfg: &KnnConfig, k_values: &[usize]) -> Result<(Vec<f64>, usize), MetricError> {
    let n = bundle.n();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0) {
        return Err(MetricError::InvalidHyperparameter(format!("k must be at least 1, got {bad}")));
    }
    let features = UnitFeatures::new(bundle)?;
    let parts = partitions(bundle, cfg)?;
    let k_max = k_values.iter().copied().max().unwrap_or(1);
    let labels = bundle.labels();
    let c = bundle.num_classes();
    let mut totals = vec![0.0; k_values.len()];
    let mut smallest_reference = usize::MAX;
    for (reference, eval) in &parts {
        smallest_reference = smallest_reference.min(reference.len());
        let ref_labels: Vec<u32> = reference.iter().map(|&i| labels[i]).collect();
        let ranked = features.neighbors(reference, eval, k_max);
        for (slot, &k) in totals.iter_mut().zip(k_values) {
            let correct = ranked
                .iter()
                .zip(eval)
                .filter(|(nbs, &i)| vote(&nbs[..k.min(nbs.len())], &ref_labels, c) == labels[i])
                .count();
            *slot += correct as f64 / eval.len() as f64;
        }
    }
    let folds = parts.len() as f64;
    Ok((totals.into_iter().map(|t| t / folds).collect(), smallest_reference))
}

pub fn knn_score(bundle: &EmbeddingBundle, cfg: &KnnConfig) -> Result<KnnResult, MetricError> {
    let (values, reference) = accuracies(bundle, cfg, &[cfg.k])?;
    let clamped_k = (cfg.k > reference).then_some(reference);
    if let Some(k) = clamped_k {
        log::info!("k = {} exceeds the reference set; using {k}", cfg.k);
    }
    Ok(KnnResult {
        value: values[0],
        clamped_k,
    })
}

/// One score per requested k, all computed on the same partition.
pub fn knn_sweep(bundle: &EmbeddingBundle, k_values: &[usize], cfg: &KnnConfig) -> Result<Vec<(usize, f64)>, MetricError> {
    let (values, _) = accuracies(bundle, cfg, k_values)?;
    Ok(k_values.iter().copied().zip(values).collect())
}
