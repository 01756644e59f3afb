//! Second-moment metrics: H-score, GBC, TransRate and TMI.

use nalgebra::{DMatrix, DVector};

use crate::bundle::EmbeddingBundle;
use crate::numerics::{center_columns, logdet_cholesky, logdet_psd, PsdMatrix};

use super::MetricError;

/// Row indices of every class, empty classes included.
pub(crate) fn class_rows(bundle: &EmbeddingBundle) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); bundle.num_classes()];
    for (i, &l) in bundle.labels().iter().enumerate() {
        rows[l as usize].push(i);
    }
    rows
}

/// Per-class mean and diagonal variance (divisor `n_c`) of selected rows.
fn diag_moments(x: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let d = x.ncols();
    let k = rows.len() as f64;
    let mean = DVector::from_fn(d, |j, _| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / k);
    let var = DVector::from_fn(d, |j, _| {
        rows.iter().map(|&i| (x[(i, j)] - mean[j]).powi(2)).sum::<f64>() / k
    });
    (mean, var)
}

/// `tr(Sigma^{-1} Sigma_b)` with a trace-scaled ridge `eps * tr(Sigma) / d`
/// on the feature covariance.
pub fn h_score(bundle: &EmbeddingBundle, eps: f64) -> Result<f64, MetricError> {
    let n = bundle.n();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let f = center_columns(&bundle.feature_matrix());
    let d = f.ncols();
    let mut cov = f.tr_mul(&f) / n as f64;
    let trace = cov.trace();
    let ridge = if trace > 0.0 { eps * trace / d as f64 } else { eps };
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| MetricError::Degenerate("feature covariance is singular".into()))?;
    let mut value = 0.0;
    for rows in class_rows(bundle).iter().filter(|r| !r.is_empty()) {
        let mu = DVector::from_fn(d, |j, _| rows.iter().map(|&i| f[(i, j)]).sum::<f64>() / rows.len() as f64);
        let solved = chol.solve(&mu);
        value += rows.len() as f64 / n as f64 * mu.dot(&solved);
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GbcCovariance {
    #[default]
    Diagonal,
    Spherical,
}

/// Bhattacharyya distance between two diagonal Gaussians.
pub fn bhattacharyya_diag(m1: &DVector<f64>, v1: &DVector<f64>, m2: &DVector<f64>, v2: &DVector<f64>) -> f64 {
    let mut dist = 0.0;
    for j in 0..m1.len() {
        let avg = 0.5 * (v1[j] + v2[j]);
        dist += (m1[j] - m2[j]).powi(2) / (8.0 * avg) + 0.5 * (avg.ln() - 0.5 * (v1[j].ln() + v2[j].ln()));
    }
    dist
}

/// Gaussian Bhattacharyya coefficient: `-sum_{i<j} exp(-D_B(i, j))` over
/// per-class Gaussians. Classes with fewer than two samples use `eps * I`.
pub fn gbc(bundle: &EmbeddingBundle, covariance: GbcCovariance, eps: f64) -> Result<f64, MetricError> {
    let x = bundle.feature_matrix();
    let d = x.ncols();
    let classes: Vec<(DVector<f64>, DVector<f64>)> = class_rows(bundle)
        .iter()
        .filter(|r| !r.is_empty())
        .map(|rows| {
            let (mean, mut var) = diag_moments(&x, rows);
            if rows.len() < 2 {
                var.fill(0.0);
            }
            if covariance == GbcCovariance::Spherical {
                let s = var.mean();
                var.fill(s);
            }
            var.add_scalar_mut(eps);
            (mean, var)
        })
        .collect();
    if classes.len() < 2 {
        return Err(MetricError::TooFewClasses {
            needed: 2,
            got: classes.len(),
        });
    }
    debug_assert!(classes.iter().all(|(m, _)| m.len() == d));
    let mut value = 0.0;
    for a in 0..classes.len() {
        for b in (a + 1)..classes.len() {
            let db = bhattacharyya_diag(&classes[a].0, &classes[a].1, &classes[b].0, &classes[b].1);
            value -= (-db).exp();
        }
    }
    Ok(value)
}

/// Coding rate `0.5 * logdet(I + d / (m * eps^2) * Z^T Z)` of an `m x d`
/// block, evaluated on whichever Gram side is smaller.
pub fn coding_rate(z: &DMatrix<f64>, eps: f64) -> f64 {
    let (m, d) = z.shape();
    if m == 0 {
        return 0.0;
    }
    let scale = d as f64 / (m as f64 * eps * eps);
    let mut gram = if m < d { z * z.transpose() } else { z.tr_mul(z) };
    gram *= scale;
    for i in 0..gram.nrows() {
        gram[(i, i)] += 1.0;
    }
    let logdet = logdet_cholesky(gram.clone()).unwrap_or_else(|| {
        let g = PsdMatrix::new(0.5 * (&gram + gram.transpose()), 0.0).expect("symmetrized");
        logdet_psd(&g).expect("symmetric")
    });
    0.5 * logdet
}

/// TransRate: `R(Z) - sum_c (n_c / n) R(Z_c)` on globally centered features.
/// Returns the clamped value and the raw difference.
pub fn transrate_raw(bundle: &EmbeddingBundle, eps: f64) -> Result<(f64, f64), MetricError> {
    let n = bundle.n();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let z = center_columns(&bundle.feature_matrix());
    let total = coding_rate(&z, eps);
    let mut within = 0.0;
    for rows in class_rows(bundle).iter().filter(|r| !r.is_empty()) {
        let zc = z.select_rows(rows.iter());
        within += rows.len() as f64 / n as f64 * coding_rate(&zc, eps);
    }
    let raw = total - within;
    if raw < 0.0 {
        log::debug!("transrate raw value {raw:e} clamped to 0");
    }
    Ok((raw.max(0.0), raw))
}

pub fn transrate(bundle: &EmbeddingBundle, eps: f64) -> Result<f64, MetricError> {
    transrate_raw(bundle, eps).map(|(v, _)| v)
}

/// Class-weighted Gaussian entropy (up to constants) of the per-class
/// diagonal covariances: `sum_c (n_c / n) * 0.5 * logdet(diag(var_c) + eps I)`.
pub fn tmi(bundle: &EmbeddingBundle, eps: f64) -> f64 {
    let x = bundle.feature_matrix();
    let n = bundle.n() as f64;
    class_rows(bundle)
        .iter()
        .filter(|r| !r.is_empty())
        .map(|rows| {
            let (_, var) = diag_moments(&x, rows);
            let logdet: f64 = var.iter().map(|v| (v + eps).ln()).sum();
            rows.len() as f64 / n * 0.5 * logdet
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bundle(rows: &[&[f32]], labels: &[u32], c: usize) -> EmbeddingBundle {
        let d = rows[0].len();
        let feats = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingBundle::new("g", d, feats, labels.to_vec(), c).unwrap()
    }

    fn random_bundle(n: usize, d: usize, c: usize, seed: u64) -> EmbeddingBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        let feats = (0..n * d)
            .map(|k| rng.random_range(-1.0f32..1.0) + labels[k / d] as f32 * 0.7)
            .collect();
        EmbeddingBundle::new("r", d, feats, labels, c).unwrap()
    }

    fn rotate(b: &EmbeddingBundle, seed: u64) -> EmbeddingBundle {
        let d = b.d();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let q = g.qr().q();
        let x = b.feature_matrix() * q;
        let feats = (0..b.n()).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| x[(i, j)] as f32).collect();
        EmbeddingBundle::new("rot", d, feats, b.labels().to_vec(), b.num_classes()).unwrap()
    }

    #[test]
    fn h_score_of_identical_features_is_zero() {
        let b = bundle(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]], &[0, 1, 0], 2);
        assert_eq!(h_score(&b, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn h_score_one_hot_two_classes_tends_to_one() {
        let b = bundle(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]], &[0, 1, 0, 1], 2);
        // Closed form: Sigma = Sigma_b = [[.25,-.25],[-.25,.25]] with ridge
        // delta = eps * tr / d = eps * 0.25; trace ratio is 0.5 / (0.5 + delta).
        for eps in [1e-2, 1e-4, 1e-8] {
            let delta = eps * 0.25;
            let expect = 0.5 / (0.5 + delta);
            assert!((h_score(&b, eps).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn h_score_is_order_and_rotation_invariant() {
        let b = random_bundle(60, 5, 3, 1);
        let v = h_score(&b, 1e-4).unwrap();
        let perm: Vec<usize> = (0..60).rev().collect();
        let p = b.subset(&perm).unwrap();
        assert!((h_score(&p, 1e-4).unwrap() - v).abs() < 1e-10 * v);
        let r = rotate(&b, 2);
        assert!((h_score(&r, 1e-4).unwrap() - v).abs() < 1e-6 * v);
    }

    #[test]
    fn gbc_examples() {
        let same = bundle(&[&[0.0], &[2.0], &[0.0], &[2.0]], &[0, 0, 1, 1], 2);
        assert!((gbc(&same, GbcCovariance::Diagonal, 1e-4).unwrap() + 1.0).abs() < 1e-12);
        // N(0,1) vs N(2,1): D_B = 2^2 / 8.
        let apart = bundle(&[&[-1.0], &[1.0], &[1.0], &[3.0]], &[0, 0, 1, 1], 2);
        let v = gbc(&apart, GbcCovariance::Diagonal, 0.0).unwrap();
        assert!((v + (-0.5f64).exp()).abs() < 1e-12);
        // D_B = 40^2 / 8 = 200.
        let far = bundle(&[&[-1.0], &[1.0], &[39.0], &[41.0]], &[0, 0, 1, 1], 2);
        let v = gbc(&far, GbcCovariance::Diagonal, 0.0).unwrap();
        assert!(v < 0.0 && v > -1e-80);
    }

    #[test]
    fn gbc_range_and_monotonicity() {
        let mut last = f64::NEG_INFINITY;
        for step in 0..8 {
            let shift = step as f32 * 0.4;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let rows: Vec<Vec<f32>> = (0..30)
                .map(|i| {
                    let base = if i % 3 == 1 { shift } else { 0.0 };
                    vec![base + rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)]
                })
                .collect();
            let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
            let labels: Vec<u32> = (0..30).map(|i| (i % 3) as u32).collect();
            let b = bundle(&refs, &labels, 3);
            let v = gbc(&b, GbcCovariance::Diagonal, 1e-4).unwrap();
            assert!((-3.0..0.0).contains(&v));
            assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn gbc_needs_two_classes_and_handles_singletons() {
        let one = bundle(&[&[0.0], &[1.0]], &[0, 0], 1);
        assert!(matches!(gbc(&one, GbcCovariance::Diagonal, 1e-4), Err(MetricError::TooFewClasses { .. })));
        let single = bundle(&[&[0.0], &[1.0], &[5.0]], &[0, 0, 1], 2);
        let v = gbc(&single, GbcCovariance::Spherical, 1e-4).unwrap();
        assert!(v.is_finite() && v < 0.0);
    }

    /// Coding rate through a dense eigendecomposition of the d x d matrix.
    fn rate_oracle(z: &DMatrix<f64>, eps: f64) -> f64 {
        let (m, d) = z.shape();
        let mut a = z.transpose() * z * (d as f64 / (m as f64 * eps * eps));
        for i in 0..d {
            a[(i, i)] += 1.0;
        }
        0.5 * SymmetricEigen::new(a).eigenvalues.iter().map(|l| l.ln()).sum::<f64>()
    }

    #[test]
    fn transrate_examples() {
        let single = random_bundle(10, 3, 1, 4);
        assert!(transrate(&single, 1e-4).unwrap().abs() < 1e-6);
        let zeros = bundle(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]], &[0, 1, 0], 2);
        assert_eq!(transrate(&zeros, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn transrate_matches_eigen_oracle() {
        let b = random_bundle(6, 2, 2, 5);
        let z = center_columns(&b.feature_matrix());
        let mut expect = rate_oracle(&z, 1e-4);
        for c in 0..2u32 {
            let rows: Vec<usize> = (0..6).filter(|&i| b.labels()[i] == c).collect();
            expect -= rows.len() as f64 / 6.0 * rate_oracle(&z.select_rows(rows.iter()), 1e-4);
        }
        let (_, raw) = transrate_raw(&b, 1e-4).unwrap();
        assert!((raw - expect).abs() <= 1e-10 * expect.abs(), "{raw} vs {expect}");
    }

    #[test]
    fn transrate_nonnegative_and_rotation_invariant() {
        for seed in 0..5 {
            let b = random_bundle(40, 6, 4, seed);
            let v = transrate(&b, 1e-4).unwrap();
            let (_, raw) = transrate_raw(&b, 1e-4).unwrap();
            assert!(raw >= -1e-6);
            let r = rotate(&b, seed + 100);
            assert!((transrate(&r, 1e-4).unwrap() - v).abs() < 1e-6 * v.abs().max(1.0));
        }
    }

    #[test]
    fn tmi_examples() {
        let b = random_bundle(30, 3, 3, 8);
        let scaled = {
            let feats = b.features().iter().map(|v| v * 2.0).collect();
            EmbeddingBundle::new("s", 3, feats, b.labels().to_vec(), 3).unwrap()
        };
        assert!(tmi(&scaled, 1e-4) > tmi(&b, 1e-4));
        let collapsed = bundle(&[&[1.0, 1.0], &[1.0, 1.0], &[4.0, 0.0], &[4.0, 0.0]], &[0, 0, 1, 1], 2);
        let eps: f64 = 1e-4;
        assert!((tmi(&collapsed, eps) - eps.ln()).abs() < 1e-12);
        // Two 1-D classes: variances 1 and 4, weights 1/2 each.
        let oned = bundle(&[&[-1.0], &[1.0], &[8.0], &[12.0]], &[0, 0, 1, 1], 2);
        let expect = 0.5 * 0.5 * (1.0f64 + eps).ln() + 0.5 * 0.5 * (4.0f64 + eps).ln();
        assert!((tmi(&oned, eps) - expect).abs() < 1e-10);
    }
}
