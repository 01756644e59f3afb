//! Distances between a source and a target bundle. Every distance here is
//! lower-better.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::EmbeddingBundle;
use crate::metrics::Orientation;
use crate::numerics::{
    column_means, heat_trace, ot_exact, reg_covariance, sqrtm_psd_product, HeatTraceConfig, NumericsError,
};

pub const DISTANCE_IDS: [&str; 5] = ["fid", "kid", "emd", "ids", "imd"];

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("feature dimension mismatch: source has {source_dim}, target has {target_dim}")]
    DimensionMismatch { source_dim: usize, target_dim: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample {index} of {bundle} has a zero-norm feature vector")]
    ZeroNorm { bundle: String, index: usize },
    #[error("mean-dist needs ≥ 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("invalid distance table: {0}")]
    InvalidTable(String),
    #[error("unknown distance: {0}")]
    UnknownDistance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScore {
    pub metric: String,
    pub value: f64,
    /// True when swapping source and target changes the value (IDS).
    pub asymmetric: bool,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundCost {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KidConfig {
    pub degree: i32,
    pub blocks: usize,
    /// `None` uses `min(n_source, n_target, 1000)`.
    pub block_size: Option<usize>,
}

impl Default for KidConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            blocks: 10,
            block_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImdConfig {
    pub heat: HeatTraceConfig,
    /// Each cloud is subsampled to at most this many points before building
    /// its graph.
    pub sample_cap: usize,
}

impl Default for ImdConfig {
    fn default() -> Self {
        Self {
            heat: HeatTraceConfig {
                probes: 128,
                ..HeatTraceConfig::default()
            },
            sample_cap: 4096,
        }
    }
}

/// Parameters for every distance, with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceParams {
    pub fid_eps: f64,
    pub kid: KidConfig,
    pub emd_cost: GroundCost,
    pub ids_cap: usize,
    pub imd: ImdConfig,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self {
            fid_eps: 1e-6,
            kid: KidConfig::default(),
            emd_cost: GroundCost::Euclidean,
            ids_cap: 10_000,
            imd: ImdConfig::default(),
        }
    }
}

pub fn orientation(_id: &str) -> Orientation {
    Orientation::LowerBetter
}

fn check_dims(source: &EmbeddingBundle, target: &EmbeddingBundle) -> Result<(), DistanceError> {
    if source.d() != target.d() {
        return Err(DistanceError::DimensionMismatch {
            source_dim: source.d(),
            target_dim: target.d(),
        });
    }
    Ok(())
}

fn need(bundle: &EmbeddingBundle, needed: usize) -> Result<(), DistanceError> {
    if bundle.n() < needed {
        return Err(DistanceError::TooFewSamples {
            needed,
            got: bundle.n(),
        });
    }
    Ok(())
}

fn sample_rows(n: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rows = index::sample(rng, n, cap).into_vec();
    rows.sort_unstable();
    rows
}

/// Fréchet distance between Gaussians fitted to the two feature sets.
pub fn fid(source: &EmbeddingBundle, target: &EmbeddingBundle, eps: f64) -> Result<f64, DistanceError> {
    check_dims(source, target)?;
    need(source, 2)?;
    need(target, 2)?;
    let (xs, xt) = (source.feature_matrix(), target.feature_matrix());
    fid_matrices(&xs, &xt, eps)
}

pub fn fid_matrices(xs: &DMatrix<f64>, xt: &DMatrix<f64>, eps: f64) -> Result<f64, DistanceError> {
    let mean_gap = (column_means(xs) - column_means(xt)).norm_squared();
    let cs = reg_covariance(xs, eps)?;
    let ct = reg_covariance(xt, eps)?;
    let cross = sqrtm_psd_product(&cs, &ct)?;
    Ok((mean_gap + cs.trace() + ct.trace() - 2.0 * cross).max(0.0))
}

fn poly_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, degree: i32) -> DMatrix<f64> {
    let d = a.ncols() as f64;
    (a * b.transpose()).map(|v| (v / d + 1.0).powi(degree))
}

/// Unbiased MMD² between the rows of `x` and `y` under the polynomial
/// kernel `((1/d) x·y + 1)^degree`.
pub fn mmd2_unbiased(x: &DMatrix<f64>, y: &DMatrix<f64>, degree: i32) -> f64 {
    let (m, n) = (x.nrows() as f64, y.nrows() as f64);
    let kxx = poly_kernel(x, x, degree);
    let kyy = poly_kernel(y, y, degree);
    let kxy = poly_kernel(x, y, degree);
    let off_diag = |k: &DMatrix<f64>| k.sum() - k.trace();
    off_diag(&kxx) / (m * (m - 1.0)) + off_diag(&kyy) / (n * (n - 1.0)) - 2.0 * kxy.sum() / (m * n)
}

/// Mean unbiased MMD² over seeded random blocks.
pub fn kid(source: &EmbeddingBundle, target: &EmbeddingBundle, cfg: &KidConfig, seed: u64) -> Result<f64, DistanceError> {
    check_dims(source, target)?;
    need(source, 2)?;
    need(target, 2)?;
    if cfg.blocks == 0 {
        return Err(DistanceError::InvalidParameter("kid needs at least one block".into()));
    }
    let m = cfg
        .block_size
        .unwrap_or(1000)
        .min(source.n())
        .min(target.n());
    if m < 2 {
        return Err(DistanceError::InvalidParameter("kid block size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.blocks)
        .map(|_| {
            (
                index::sample(&mut rng, source.n(), m).into_vec(),
                index::sample(&mut rng, target.n(), m).into_vec(),
            )
        })
        .collect();
    let total: f64 = blocks
        .par_iter()
        .map(|(a, b)| mmd2_unbiased(&source.feature_rows(a), &target.feature_rows(b), cfg.degree))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / cfg.blocks as f64)
}

/// Count-weighted class-mean clusters of a bundle (empty classes dropped).
pub fn class_clusters(bundle: &EmbeddingBundle) -> (DMatrix<f64>, Vec<f64>) {
    let counts = bundle.class_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    let mut means = DMatrix::<f64>::zeros(present.len(), bundle.d());
    let slot: Vec<Option<usize>> = {
        let mut s = vec![None; counts.len()];
        for (k, &c) in present.iter().enumerate() {
            s[c] = Some(k);
        }
        s
    };
    for (i, &l) in bundle.labels().iter().enumerate() {
        let k = slot[l as usize].expect("label counted");
        for (j, &v) in bundle.row(i).iter().enumerate() {
            means[(k, j)] += v as f64;
        }
    }
    for (k, &c) in present.iter().enumerate() {
        let mut row = means.row_mut(k);
        row /= counts[c] as f64;
    }
    let n = bundle.n() as f64;
    let weights = present.iter().map(|&c| counts[c] as f64 / n).collect();
    (means, weights)
}

fn ground_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, cost: GroundCost) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let (ra, rb) = (a.row(i), b.row(j));
        match cost {
            GroundCost::Euclidean => (ra - rb).norm(),
            GroundCost::Cosine => {
                let denom = ra.norm() * rb.norm();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - ra.dot(&rb) / denom
                }
            }
        }
    })
}

/// Exact optimal transport between the class-mean clusters.
pub fn emd(source: &EmbeddingBundle, target: &EmbeddingBundle, cost: GroundCost) -> Result<f64, DistanceError> {
    check_dims(source, target)?;
    need(source, 1)?;
    need(target, 1)?;
    let (ms, ws) = class_clusters(source);
    let (mt, wt) = class_clusters(target);
    let c = ground_cost(&ms, &mt, cost);
    Ok(ot_exact(&ws, &wt, &c)?.max(0.0))
}

fn unit_rows(bundle: &EmbeddingBundle, rows: &[usize]) -> Result<DMatrix<f64>, DistanceError> {
    let mut x = bundle.feature_rows(rows);
    for (k, mut row) in x.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(DistanceError::ZeroNorm {
                bundle: bundle.name().to_string(),
                index: rows[k],
            });
        }
        row /= norm;
    }
    Ok(x)
}

/// Mean distance from each (L2-normalized) target sample to its nearest
/// source sample. Asymmetric.
pub fn ids(source: &EmbeddingBundle, target: &EmbeddingBundle, sample_cap: usize, seed: u64) -> Result<f64, DistanceError> {
    check_dims(source, target)?;
    need(source, 1)?;
    need(target, 1)?;
    if sample_cap == 0 {
        return Err(DistanceError::InvalidParameter("ids sample cap must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_rows = sample_rows(source.n(), sample_cap, &mut rng);
    let tgt_rows = sample_rows(target.n(), sample_cap, &mut rng);
    let s = unit_rows(source, &src_rows)?;
    let t = unit_rows(target, &tgt_rows)?;
    let st = s.transpose();
    let starts: Vec<usize> = (0..t.nrows()).step_by(256).collect();
    let total: f64 = starts
        .par_iter()
        .map(|&start| {
            let len = 256.min(t.nrows() - start);
            let block = t.rows(start, len);
            let dots = block * &st;
            let mut sum = 0.0;
            for i in 0..len {
                let row = dots.row(i);
                let best = row.iter().enumerate().fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
                sum += (block.row(i) - s.row(best)).norm();
            }
            sum
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / t.nrows() as f64)
}

/// Weighted L1 gap between heat-trace signatures, with weights
/// `exp(-2 (t + 1/t))` over the time grid.
pub fn imd_from_traces(grid: &[f64], a: &[f64], b: &[f64]) -> f64 {
    grid.iter()
        .zip(a.iter().zip(b))
        .map(|(&t, (x, y))| (-2.0 * (t + 1.0 / t)).exp() * (x - y).abs())
        .sum()
}

pub fn imd(source: &EmbeddingBundle, target: &EmbeddingBundle, cfg: &ImdConfig) -> Result<f64, DistanceError> {
    need(source, cfg.heat.graph_k + 1)?;
    need(target, cfg.heat.graph_k + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.heat.seed);
    let src_rows = sample_rows(source.n(), cfg.sample_cap, &mut rng);
    let tgt_rows = sample_rows(target.n(), cfg.sample_cap, &mut rng);
    let hs = heat_trace(&source.feature_rows(&src_rows), &cfg.heat)?;
    let ht = heat_trace(&target.feature_rows(&tgt_rows), &cfg.heat)?;
    Ok(imd_from_traces(&cfg.heat.t_grid, &hs, &ht))
}

/// Computes the distance `id` with timing attached.
pub fn compute_distance(
    id: &str,
    source: &EmbeddingBundle,
    target: &EmbeddingBundle,
    params: &DistanceParams,
    seed: u64,
) -> Result<DistanceScore, DistanceError> {
    let start = Instant::now();
    let value = match id {
        "fid" => fid(source, target, params.fid_eps)?,
        "kid" => kid(source, target, &params.kid, seed)?,
        "emd" => emd(source, target, params.emd_cost)?,
        "ids" => ids(source, target, params.ids_cap, seed)?,
        "imd" => {
            let mut cfg = params.imd.clone();
            cfg.heat.seed = seed;
            imd(source, target, &cfg)?
        }
        other => return Err(DistanceError::UnknownDistance(other.to_string())),
    };
    Ok(DistanceScore {
        metric: id.to_string(),
        value,
        asymmetric: id == "ids",
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Expands `all` and rejects unknown ids.
pub fn resolve_distances<S: AsRef<str>>(ids: &[S]) -> Result<Vec<String>, DistanceError> {
    let mut out = Vec::new();
    for id in ids {
        match id.as_ref() {
            "all" => out.extend(DISTANCE_IDS.iter().map(|s| s.to_string())),
            s if DISTANCE_IDS.contains(&s) => out.push(s.to_string()),
            s => return Err(DistanceError::UnknownDistance(s.to_string())),
        }
    }
    Ok(out)
}

/// Z-scores each metric column across candidates (population deviation;
/// constant columns become zeros) and averages per candidate.
/// `columns[m][c]` is metric `m` for candidate `c`.
pub fn mean_dist(columns: &[Vec<f64>]) -> Result<Vec<f64>, DistanceError> {
    let first = columns
        .first()
        .ok_or_else(|| DistanceError::InvalidTable("no metric columns".into()))?;
    let n = first.len();
    if n < 2 {
        return Err(DistanceError::TooFewCandidates(n));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(DistanceError::InvalidTable("columns differ in length".into()));
    }
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DistanceError::InvalidTable("missing or non-finite entry".into()));
    }
    let mut out = vec![0.0; n];
    for col in columns {
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            for (o, v) in out.iter_mut().zip(col) {
                *o += (v - mean) / sd;
            }
        }
    }
    let m = columns.len() as f64;
    Ok(out.into_iter().map(|v| v / m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(n: usize, d: usize, shift: f32, seed: u64) -> EmbeddingBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = (0..n * d)
            .map(|_| shift + <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng))
            .collect();
        let labels = (0..n).map(|i| (i % 3) as u32).collect();
        EmbeddingBundle::new(format!("cloud{seed}"), d, feats, labels, 3).unwrap()
    }

    fn from_rows(rows: &[&[f32]], labels: &[u32], c: usize) -> EmbeddingBundle {
        let d = rows[0].len();
        EmbeddingBundle::new("rows", d, rows.concat(), labels.to_vec(), c).unwrap()
    }

    #[test]
    fn fid_anchors() {
        let a = cloud(50, 3, 0.0, 1);
        assert!(fid(&a, &a, 1e-6).unwrap() < 1e-6);
        let x = from_rows(&[&[-1.0], &[1.0]], &[0, 0], 1);
        let y = from_rows(&[&[2.0], &[4.0]], &[0, 0], 1);
        assert!((fid(&x, &y, 1e-6).unwrap() - 9.0).abs() < 1e-9);
        let wide = cloud(10, 4, 0.0, 2);
        let narrow = cloud(10, 3, 0.0, 2);
        assert!(matches!(fid(&wide, &narrow, 1e-6), Err(DistanceError::DimensionMismatch { .. })));
    }

    #[test]
    fn fid_symmetric() {
        let (a, b) = (cloud(60, 4, 0.0, 3), cloud(80, 4, 0.5, 4));
        let (ab, ba) = (fid(&a, &b, 1e-6).unwrap(), fid(&b, &a, 1e-6).unwrap());
        assert!((ab - ba).abs() < 1e-6 * ab);
    }

    #[test]
    fn mmd_matches_hand_expansion() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let y = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 1.5, -1.0]);
        let k = |a: [f64; 2], b: [f64; 2]| ((a[0] * b[0] + a[1] * b[1]) / 2.0 + 1.0).powi(3);
        let (x0, x1, y0, y1) = ([1.0, 0.5], [-0.3, 2.0], [0.2, 0.1], [1.5, -1.0]);
        let want = (k(x0, x1) + k(x1, x0)) / 2.0 + (k(y0, y1) + k(y1, y0)) / 2.0
            - 2.0 * (k(x0, y0) + k(x0, y1) + k(x1, y0) + k(x1, y1)) / 4.0;
        assert!((mmd2_unbiased(&x, &y, 3) - want).abs() < 1e-12);
    }

    #[test]
    fn kid_same_distribution_is_small_and_seeded() {
        let a = cloud(2000, 4, 0.0, 5);
        let b = cloud(2000, 4, 0.0, 6);
        let cfg = KidConfig::default();
        let v = kid(&a, &b, &cfg, 1).unwrap();
        // k(mu, mu) = 1 for zero-mean clouds.
        assert!(v.abs() < 0.01, "{v}");
        assert_eq!(v, kid(&a, &b, &cfg, 1).unwrap());
        let far = cloud(2000, 4, 1.0, 7);
        assert!(kid(&a, &far, &cfg, 1).unwrap() > 10.0 * v.abs());
    }

    #[test]
    fn emd_anchors() {
        let a = cloud(30, 2, 0.0, 8);
        assert!(emd(&a, &a, GroundCost::Euclidean).unwrap().abs() < 1e-12);
        let x = from_rows(&[&[0.0, 0.0], &[1.0, 0.0]], &[0, 0], 1);
        let y = from_rows(&[&[0.5, 2.5], &[0.5, 2.5]], &[0, 0], 1);
        assert!((emd(&x, &y, GroundCost::Euclidean).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn emd_is_symmetric_and_rotation_invariant() {
        let (a, b) = (cloud(40, 3, 0.0, 9), cloud(50, 3, 1.0, 10));
        let ab = emd(&a, &b, GroundCost::Euclidean).unwrap();
        assert!((ab - emd(&b, &a, GroundCost::Euclidean).unwrap()).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let rot = |b: &EmbeddingBundle| {
            let m = b.feature_matrix() * &q;
            EmbeddingBundle::new("r", 3, m.transpose().iter().map(|&v| v as f32).collect(), b.labels().to_vec(), 3)
                .unwrap()
        };
        let r = emd(&rot(&a), &rot(&b), GroundCost::Euclidean).unwrap();
        assert!((ab - r).abs() < 1e-5 * ab);
    }

    #[test]
    fn ids_anchors() {
        let a = cloud(40, 3, 0.0, 11);
        assert_eq!(ids(&a, &a, 10_000, 0).unwrap(), 0.0);
        let t = from_rows(&[&[3.0, 0.0]], &[0], 1);
        let s = from_rows(&[&[0.0, 0.5]], &[0], 1);
        assert!((ids(&s, &t, 10_000, 0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ids_matches_double_loop_and_is_asymmetric() {
        // Dense ring of directions vs a single direction.
        let ring: Vec<f32> = (0..72)
            .flat_map(|i| {
                let a = i as f32 * std::f32::consts::TAU / 72.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let grid = EmbeddingBundle::new("grid", 2, ring, vec![0; 72], 1).unwrap();
        let point = from_rows(&[&[1.0, 0.01]], &[0], 1);
        let to_grid = ids(&grid, &point, 10_000, 0).unwrap();
        let to_point = ids(&point, &grid, 10_000, 0).unwrap();
        assert!(to_grid * 50.0 < to_point, "{to_grid} vs {to_point}");

        let oracle = |src: &EmbeddingBundle, tgt: &EmbeddingBundle| {
            let unit = |r: &[f32]| {
                let n = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                r.iter().map(|v| *v as f64 / n).collect::<Vec<_>>()
            };
            let mut total = 0.0;
            for i in 0..tgt.n() {
                let t = unit(tgt.row(i));
                let best = (0..src.n())
                    .map(|j| {
                        let s = unit(src.row(j));
                        t.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                total += best;
            }
            total / tgt.n() as f64
        };
        assert!((to_point - oracle(&point, &grid)).abs() < 1e-12);
        let (a, b) = (cloud(70, 5, 0.3, 12), cloud(300, 5, 0.0, 13));
        assert!((ids(&a, &b, 10_000, 0).unwrap() - oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn imd_anchors() {
        let a = cloud(100, 3, 0.0, 14);
        let cfg = ImdConfig::default();
        assert_eq!(imd(&a, &a, &cfg).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let m = a.feature_matrix() * q;
        let r = EmbeddingBundle::new("r", 3, m.transpose().iter().map(|&v| v as f32).collect(), a.labels().to_vec(), 3)
            .unwrap();
        assert!(imd(&a, &r, &cfg).unwrap() < 1e-6);
    }

    #[test]
    fn imd_close_to_dense_eigensolver() {
        use crate::numerics::{knn_graph, NormalizedLaplacian};
        use nalgebra::SymmetricEigen;
        let (a, b) = (cloud(100, 2, 0.0, 16), cloud(100, 8, 0.0, 17));
        let cfg = ImdConfig::default();
        let dense = |x: &EmbeddingBundle| {
            let l = NormalizedLaplacian::new(knn_graph(&x.feature_matrix(), cfg.heat.graph_k)).to_dense();
            let eig = SymmetricEigen::new(l);
            cfg.heat
                .t_grid
                .iter()
                .map(|&t| eig.eigenvalues.iter().map(|l| (-t * l).exp()).sum::<f64>() / x.n() as f64)
                .collect::<Vec<_>>()
        };
        let want = imd_from_traces(&cfg.heat.t_grid, &dense(&a), &dense(&b));
        let got = imd(&a, &b, &cfg).unwrap();
        assert!((got - want).abs() < 0.1 * want, "{got} vs {want}");
    }

    #[test]
    fn mean_dist_examples() {
        let z = mean_dist(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((z[0] + 1.0 / s).abs() < 1e-12 && z[1].abs() < 1e-12);
        let both = mean_dist(&[vec![1.0, 2.0, 4.0], vec![-1.0, -2.0, -4.0]]).unwrap();
        assert!(both.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(mean_dist(&[vec![5.0, 5.0]]).unwrap(), vec![0.0, 0.0]);
        let err = mean_dist(&[vec![1.0]]).unwrap_err();
        assert!(err.to_string().starts_with("mean-dist needs ≥ 2 candidates"));
    }

    #[test]
    fn mean_dist_matches_hand_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let z = |c: &[f64], i: usize| {
            let m = (c[0] + c[1] + c[2]) / 3.0;
            let v = ((c[0] - m).powi(2) + (c[1] - m).powi(2) + (c[2] - m).powi(2)) / 3.0;
            (c[i] - m) / v.sqrt()
        };
        let got = mean_dist(&cols).unwrap();
        for i in 0..3 {
            assert!((got[i] - (z(&cols[0], i) + z(&cols[1], i)) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distances_resolve() {
        assert_eq!(resolve_distances(&["all"]).unwrap().len(), 5);
        assert!(matches!(resolve_distances(&["nope"]), Err(DistanceError::UnknownDistance(_))));
        let a = cloud(20, 2, 0.0, 15);
        let s = compute_distance("ids", &a, &a, &DistanceParams::default(), 0).unwrap();
        assert!(s.asymmetric && s.value == 0.0);
    }
}
