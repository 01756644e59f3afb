//! Pairwise-kernel metrics: PARC and LFC.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::EmbeddingBundle;
use crate::numerics::center_columns;

use super::MetricError;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let v = values[order[start] as usize];
        let mut end = start + 1;
        while end < order.len() && values[order[end] as usize] == v {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i as usize] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Sorted row indices of a seeded subsample of at most `cap` rows.
fn subsample(n: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if n <= cap {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, n, cap).into_vec();
    rows.sort_unstable();
    Some(rows)
}

fn rows_and_labels(bundle: &EmbeddingBundle, cap: usize, seed: u64) -> (DMatrix<f64>, Vec<u32>) {
    match subsample(bundle.n(), cap, seed) {
        Some(rows) => (
            bundle.feature_rows(&rows),
            rows.iter().map(|&i| bundle.labels()[i]).collect(),
        ),
        None => (bundle.feature_matrix(), bundle.labels().to_vec()),
    }
}

/// Spearman correlation between pairwise feature dissimilarity
/// `1 - corr(x_i, x_j)` and pairwise one-hot label dissimilarity, over
/// all pairs `i < j`.
pub fn parc(bundle: &EmbeddingBundle, sample_cap: usize, seed: u64) -> Result<f64, MetricError> {
    let n = bundle.n().min(sample_cap);
    if n < 3 {
        return Err(MetricError::TooFewSamples { needed: 3, got: n });
    }
    let (mut x, labels) = rows_and_labels(bundle, sample_cap, seed);
    for (i, mut row) in x.row_iter_mut().enumerate() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
        let norm = row.norm();
        if norm == 0.0 {
            return Err(MetricError::Degenerate(format!("degenerate features: row {i} has zero variance")));
        }
        row /= norm;
    }
    let corr = &x * x.transpose();
    drop(x);

    // One-hot rows of length C correlate at 1 within a class and at
    // -1/(C-1) across classes, so the label side only takes two values.
    let c = bundle.num_classes();
    if c < 2 {
        return Err(MetricError::TooFewClasses { needed: 2, got: c });
    }
    let across = c as f64 / (c as f64 - 1.0);
    let pairs = n * (n - 1) / 2;
    let mut feature = Vec::with_capacity(pairs);
    let mut label = Vec::with_capacity(pairs);
    for j in 0..n {
        for i in (j + 1)..n {
            feature.push(1.0 - corr[(i, j)]);
            label.push(if labels[i] == labels[j] { 0.0 } else { across });
        }
    }
    drop(corr);
    spearman(&feature, &label)
        .ok_or_else(|| MetricError::Degenerate("constant pairwise dissimilarities".into()))
}

/// Linear CKA between the Gram kernel of L2-normalized features and the
/// Gram kernel of one-hot labels, both centered.
pub fn lfc(bundle: &EmbeddingBundle, sample_cap: usize, seed: u64) -> Result<f64, MetricError> {
    let n = bundle.n().min(sample_cap);
    if n < 3 {
        return Err(MetricError::TooFewSamples { needed: 3, got: n });
    }
    let (mut x, labels) = rows_and_labels(bundle, sample_cap, seed);
    for (i, mut row) in x.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(MetricError::ZeroNorm { index: i });
        }
        row /= norm;
    }
    let c = bundle.num_classes();
    let y = DMatrix::from_fn(n, c, |i, k| (labels[i] as usize == k) as u8 as f64);
    // With H the centering matrix, <H K_f H, H K_y H> = |(HF)^T (HY)|^2.
    let f = center_columns(&x);
    let y = center_columns(&y);
    let cross = f.tr_mul(&y).norm_squared();
    let ff = f.tr_mul(&f).norm();
    let yy = y.tr_mul(&y).norm();
    if ff == 0.0 || yy == 0.0 {
        return Err(MetricError::Degenerate("zero-norm kernel".into()));
    }
    Ok((cross / (ff * yy)).clamp(-1.0, 1.0))
}
