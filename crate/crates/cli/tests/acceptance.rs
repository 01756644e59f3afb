//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xfermetric::bundle::EmbeddingBundle;
use xfermetric::distance::{emd, fid, kid, GroundCost, KidConfig};
use xfermetric::evaluation::{
    evaluate, kendall_tau, pearson_rho, rel_at_1, rtp, tg, weighted_kendall_tau, EvaluateOptions, Measure,
    ScoreTable, Target, TransferRecord,
};
use xfermetric::knn::{knn_score, knn_sweep, KnnConfig, KnnMode};
use xfermetric::metrics::{gbc, h_score, leep, nce, run_metrics, transrate_raw, GbcCovariance, MetricRegistry, Orientation};
use xfermetric::synthetic::{candidate_pool, clustered, noise, SyntheticSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Random labelled bundle with every class holding at least two samples.
fn random_bundle(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize, z: usize, shift: f64) -> EmbeddingBundle {
    let mut labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    labels.shuffle(rng);
    let centres: Vec<f64> = (0..c * d).map(|_| 1.5 * gauss(rng)).collect();
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for j in 0..d {
            features.push((centres[l as usize * d + j] + scales[j] * gauss(rng) + shift) as f32);
        }
    }
    let mut preds = Vec::with_capacity(n * z);
    for _ in 0..n {
        let logits: Vec<f64> = (0..z).map(|_| 2.0 * gauss(rng)).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|v| (v - top).exp()).sum();
        preds.extend(logits.iter().map(|v| ((v - top).exp() / total) as f32));
    }
    EmbeddingBundle::new("random", d, features, labels, c)
        .and_then(|b| b.with_predictions(z, preds))
        .expect("valid random bundle")
}

fn rows(b: &EmbeddingBundle) -> Vec<Vec<f64>> {
    (0..b.n()).map(|i| b.row(i).iter().map(|&v| v as f64).collect()).collect()
}

fn mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let d = xs[0].len();
    (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect()
}

fn covariance(xs: &[Vec<f64>]) -> DMatrix<f64> {
    let m = mean(xs);
    let d = m.len();
    let mut c = DMatrix::zeros(d, d);
    for x in xs {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += (x[a] - m[a]) * (x[b] - m[b]);
            }
        }
    }
    c / xs.len() as f64
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let root = DVector::from_iterator(e.eigenvalues.len(), e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * DMatrix::from_diagonal(&root) * e.eigenvectors.transpose()
}

fn oracle_nce(b: &EmbeddingBundle) -> f64 {
    let z = b.num_source_classes();
    let preds = b.predictions().unwrap();
    let mut joint: HashMap<(usize, u32), f64> = HashMap::new();
    let mut marginal: HashMap<usize, f64> = HashMap::new();
    for (i, &y) in b.labels().iter().enumerate() {
        let row = &preds[i * z..(i + 1) * z];
        let top = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let s = row.iter().position(|&v| v == top).unwrap();
        *joint.entry((s, y)).or_default() += 1.0;
        *marginal.entry(s).or_default() += 1.0;
    }
    let n = b.n() as f64;
    let mut entropy = 0.0;
    for (&s, &ns) in &marginal {
        let h: f64 = joint
            .iter()
            .filter(|((src, _), _)| *src == s)
            .map(|(_, &k)| -(k / ns) * (k / ns).ln())
            .sum();
        entropy += ns / n * h;
    }
    -entropy
}

fn oracle_leep(b: &EmbeddingBundle) -> f64 {
    let (n, z, c) = (b.n(), b.num_source_classes(), b.num_classes());
    let theta = |i: usize, k: usize| b.predictions().unwrap()[i * z + k] as f64;
    let mut joint = vec![vec![0.0; z]; c];
    for i in 0..n {
        for k in 0..z {
            joint[b.labels()[i] as usize][k] += theta(i, k) / n as f64;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let y = b.labels()[i] as usize;
        let mut p = 0.0;
        for k in 0..z {
            let pz: f64 = (0..c).map(|yy| joint[yy][k]).sum();
            p += joint[y][k] / pz * theta(i, k);
        }
        total += p.ln();
    }
    total / n as f64
}

fn by_class(b: &EmbeddingBundle) -> Vec<Vec<Vec<f64>>> {
    let all = rows(b);
    let mut out = vec![Vec::new(); b.num_classes()];
    for (x, &l) in all.into_iter().zip(b.labels()) {
        out[l as usize].push(x);
    }
    out
}

fn oracle_h_score(b: &EmbeddingBundle, eps: f64) -> f64 {
    let all = rows(b);
    let d = b.d();
    let mu = mean(&all);
    let mut cov = covariance(&all);
    let ridge = eps * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let mut between = DMatrix::zeros(d, d);
    for class in by_class(b) {
        let m = DVector::from_vec(mean(&class)) - DVector::from_column_slice(&mu);
        between += (&m * m.transpose()) * (class.len() as f64 / all.len() as f64);
    }
    let e = SymmetricEigen::new(cov);
    let inv = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v)) * e.eigenvectors.transpose();
    (inv * between).trace()
}

fn oracle_gbc(b: &EmbeddingBundle, eps: f64) -> f64 {
    let stats: Vec<(Vec<f64>, Vec<f64>)> = by_class(b)
        .iter()
        .map(|class| {
            let m = mean(class);
            let v = (0..m.len())
                .map(|j| class.iter().map(|x| (x[j] - m[j]).powi(2)).sum::<f64>() / class.len() as f64 + eps)
                .collect();
            (m, v)
        })
        .collect();
    let mut value = 0.0;
    for a in 0..stats.len() {
        for c in (a + 1)..stats.len() {
            let (m1, v1) = &stats[a];
            let (m2, v2) = &stats[c];
            let s = DMatrix::from_diagonal(&DVector::from_iterator(v1.len(), v1.iter().zip(v2).map(|(p, q)| 0.5 * (p + q))));
            let s1 = DMatrix::from_diagonal(&DVector::from_column_slice(v1));
            let s2 = DMatrix::from_diagonal(&DVector::from_column_slice(v2));
            let delta = DVector::from_column_slice(m1) - DVector::from_column_slice(m2);
            let maha = (delta.transpose() * s.clone().try_inverse().unwrap() * &delta)[(0, 0)];
            let db = maha / 8.0 + 0.5 * (s.determinant() / (s1.determinant() * s2.determinant()).sqrt()).ln();
            value -= (-db).exp();
        }
    }
    value
}

fn coding_rate(xs: &[Vec<f64>], centre: &[f64], eps: f64) -> f64 {
    let d = centre.len();
    let m = xs.len() as f64;
    let mut gram = DMatrix::zeros(d, d);
    for x in xs {
        let v = DVector::from_iterator(d, x.iter().zip(centre).map(|(a, b)| a - b));
        gram += &v * v.transpose();
    }
    let scale = d as f64 / (m * eps * eps);
    0.5 * eigenvalues(&gram).iter().map(|l| (1.0 + scale * l.max(0.0)).ln()).sum::<f64>()
}

fn oracle_transrate(b: &EmbeddingBundle, eps: f64) -> f64 {
    let all = rows(b);
    let centre = mean(&all);
    let n = all.len() as f64;
    let within: f64 = by_class(b)
        .iter()
        .map(|class| class.len() as f64 / n * coding_rate(class, &centre, eps))
        .sum();
    coding_rate(&all, &centre, eps) - within
}

fn oracle_fid(s: &EmbeddingBundle, t: &EmbeddingBundle, eps: f64) -> f64 {
    let (xs, xt) = (rows(s), rows(t));
    let gap: f64 = mean(&xs).iter().zip(mean(&xt)).map(|(a, b)| (a - b).powi(2)).sum();
    let ridge = DMatrix::identity(s.d(), s.d()) * eps;
    let a = covariance(&xs) + &ridge;
    let b = covariance(&xt) + &ridge;
    let ra = sqrt_psd(&a);
    let cross: f64 = eigenvalues(&(&ra * &b * &ra)).iter().map(|l| l.max(0.0).sqrt()).sum();
    gap + a.trace() + b.trace() - 2.0 * cross
}

fn clusters(b: &EmbeddingBundle) -> (Vec<Vec<f64>>, Vec<f64>) {
    let groups: Vec<_> = by_class(b).into_iter().filter(|g| !g.is_empty()).collect();
    let n = b.n() as f64;
    (groups.iter().map(|g| mean(g)).collect(), groups.iter().map(|g| g.len() as f64 / n).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum cost over every basic solution of the transport polytope.
fn oracle_emd(s: &EmbeddingBundle, t: &EmbeddingBundle) -> f64 {
    let (ms, ws) = clusters(s);
    let (mt, wt) = clusters(t);
    let (m, n) = (ms.len(), mt.len());
    let cost: Vec<f64> = (0..m * n)
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            ms[i].iter().zip(&mt[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let rhs = DVector::from_iterator(m + n, ws.iter().chain(&wt).copied());
    let mut best = f64::INFINITY;
    for basis in combinations(m * n, m + n - 1) {
        let a = DMatrix::from_fn(m + n, basis.len(), |r, k| {
            let (i, j) = (basis[k] / n, basis[k] % n);
            if r == i || r == m + j {
                1.0
            } else {
                0.0
            }
        });
        let Ok(x) = a.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if (&a * &x - &rhs).amax() > 1e-10 || x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let c: f64 = basis.iter().zip(x.iter()).map(|(&cell, &v)| cost[cell] * v).sum();
        best = best.min(c);
    }
    best
}

fn oracle_mmd2(s: &EmbeddingBundle, t: &EmbeddingBundle, degree: i32) -> f64 {
    let (xs, xt) = (rows(s), rows(t));
    let d = s.d() as f64;
    let k = |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / d + 1.0).powi(degree);
    let (m, n) = (xs.len() as f64, xt.len() as f64);
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for (i, a) in xs.iter().enumerate() {
        for (j, b) in xs.iter().enumerate() {
            if i != j {
                kxx += k(a, b);
            }
        }
        for b in &xt {
            kxy += k(a, b);
        }
    }
    for (i, a) in xt.iter().enumerate() {
        for (j, b) in xt.iter().enumerate() {
            if i != j {
                kyy += k(a, b);
            }
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let above = v.iter().filter(|y| *y > x).count() as f64;
            let tied = v.iter().enumerate().filter(|&(j, y)| j != i && y == x).count() as f64;
            above + tied / 2.0
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn oracle_tau_w(s: &[f64], p: &[f64]) -> f64 {
    let r = oracle_ranks(p);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i != j {
                let w = 1.0 / (r[i] + 1.0) + 1.0 / (r[j] + 1.0);
                num += w * sign(s[i] - s[j]) * sign(p[i] - p[j]);
                den += w;
            }
        }
    }
    num / den
}

fn tie_pairs(v: &[f64]) -> f64 {
    let mut groups: HashMap<u64, f64> = HashMap::new();
    for x in v {
        *groups.entry(x.to_bits()).or_default() += 1.0;
    }
    groups.values().map(|t| t * (t - 1.0) / 2.0).sum()
}

fn oracle_tau_b(s: &[f64], p: &[f64]) -> f64 {
    let n = s.len() as f64;
    let (mut concordant, mut discordant) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let prod = (s[i] - s[j]) * (p[i] - p[j]);
            if prod > 0.0 {
                concordant += 1.0;
            } else if prod < 0.0 {
                discordant += 1.0;
            }
        }
    }
    let n0 = n * (n - 1.0) / 2.0;
    (concordant - discordant) / ((n0 - tie_pairs(s)) * (n0 - tie_pairs(p))).sqrt()
}

fn oracle_pearson(s: &[f64], p: &[f64]) -> f64 {
    let n = s.len() as f64;
    let (sx, sy) = (s.iter().sum::<f64>(), p.iter().sum::<f64>());
    let sxy: f64 = s.iter().zip(p).map(|(a, b)| a * b).sum();
    let sxx: f64 = s.iter().map(|a| a * a).sum();
    let syy: f64 = p.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

fn oracle_rel1(s: &[f64], p: &[f64], pessimistic: bool) -> f64 {
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let picks: Vec<f64> = (0..s.len()).filter(|&i| s[i] == top).map(|i| p[i]).collect();
    let pick = if pessimistic {
        picks.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        picks.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    pick / best
}

/// Tracks the worst relative error seen per quantity.
#[derive(Default)]
struct ErrorLog {
    worst: Vec<(&'static str, f64, f64)>,
}

impl ErrorLog {
    fn record(&mut self, name: &'static str, got: f64, want: f64, floor: f64, tol: f64) {
        let err = if got == want { 0.0 } else { (got - want).abs() / want.abs().max(floor) };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        match self.worst.iter_mut().find(|w| w.0 == name) {
            Some(w) => w.1 = w.1.max(err),
            None => self.worst.push((name, err, tol)),
        }
    }

    fn failures(&self) -> Vec<String> {
        self.worst
            .iter()
            .filter(|(_, e, tol)| *e > *tol)
            .map(|(n, e, tol)| format!("{n} rel err {e:.2e} > {tol:.0e}"))
            .collect()
    }

    fn summary(&self) -> String {
        self.worst.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
    }
}

const INSTANCES: usize = 60;
const EXACT: f64 = 1e-8;
const EIGEN: f64 = 1e-6;

fn formula_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut log = ErrorLog::default();
    let eps = 1e-4;
    for _ in 0..INSTANCES {
        let n = rng.random_range(20..=200);
        let d = rng.random_range(2..=16);
        let c = rng.random_range(2..=4);
        let z = rng.random_range(2..=8);
        let b = random_bundle(&mut rng, n, d, c, z, 0.0);

        log.record("nce", nce(&b).unwrap(), oracle_nce(&b), 1e-12, EXACT);
        log.record("leep", leep(&b).unwrap(), oracle_leep(&b), 1e-12, EXACT);
        log.record("h_score", h_score(&b, eps).unwrap(), oracle_h_score(&b, eps), 1e-12, EIGEN);
        log.record("gbc", gbc(&b, GbcCovariance::Diagonal, eps).unwrap(), oracle_gbc(&b, eps), 1e-300, EXACT);
        log.record("transrate", transrate_raw(&b, eps).unwrap().1, oracle_transrate(&b, eps), 1e-12, EIGEN);

        let t_classes = rng.random_range(2..=4);
        let t = random_bundle(&mut rng, n, d, t_classes, 2, 0.7);
        log.record("fid", fid(&b, &t, 1e-6).unwrap(), oracle_fid(&b, &t, 1e-6), 1e-12, EIGEN);
        log.record("emd", emd(&b, &t, GroundCost::Euclidean).unwrap(), oracle_emd(&b, &t), 1e-12, EXACT);
        let cfg = KidConfig { degree: 3, blocks: 2, block_size: None };
        let seed = rng.random();
        log.record("kid", kid(&b, &t, &cfg, seed).unwrap(), oracle_mmd2(&b, &t, 3), 1e-12, EXACT);

        let m = rng.random_range(3..=40);
        let s: Vec<f64> = (0..m).map(|_| (rng.random_range(0.0..1.0f64) * 10.0).round() / 10.0).collect();
        let p: Vec<f64> = (0..m).map(|_| (rng.random_range(0.05..1.0f64) * 20.0).round() / 20.0).collect();
        log.record("tau_w", weighted_kendall_tau(&s, &p).unwrap(), oracle_tau_w(&s, &p), 1.0, EXACT);
        match kendall_tau(&s, &p) {
            Ok(v) => log.record("tau", v, oracle_tau_b(&s, &p), 1.0, EXACT),
            Err(_) => log.record("tau", 0.0, if oracle_tau_b(&s, &p).is_finite() { 1.0 } else { 0.0 }, 1.0, EXACT),
        }
        match pearson_rho(&s, &p) {
            Ok(v) => log.record("pearson", v, oracle_pearson(&s, &p), 1.0, EXACT),
            Err(_) => log.record("pearson", 0.0, if oracle_pearson(&s, &p).is_finite() { 1.0 } else { 0.0 }, 1.0, EXACT),
        }
        for pessimistic in [false, true] {
            log.record("rel1", rel_at_1(&s, &p, pessimistic).unwrap(), oracle_rel1(&s, &p, pessimistic), 1.0, EXACT);
        }
    }
    let elapsed = start.elapsed();
    let mut failures = log.failures();
    if elapsed > Duration::from_secs(120) {
        failures.push(format!("took {elapsed:.1?}"));
    }
    if failures.is_empty() {
        outcome(true, format!("{INSTANCES} instances in {elapsed:.1?}; worst: {}", log.summary()))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn analytic_anchors() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };

    for (c, z) in [(2usize, 4usize), (5, 8), (10, 2)] {
        let n = 20 * c;
        let labels = (0..n).map(|i| (i % c) as u32).collect();
        let b = EmbeddingBundle::new("uniform", 1, vec![1.0; n], labels, c)
            .and_then(|b| b.with_predictions(z, vec![1.0 / z as f32; n * z]))
            .unwrap();
        let want = -(c as f64).ln();
        check("nce", nce(&b).unwrap(), want);
        check("leep", leep(&b).unwrap(), want);
    }

    let feats: Vec<f32> = [0.0f32, 1.0, 3.0, 2.0, -1.0, 0.5].repeat(2);
    let labels = (0..6).map(|i| (i / 3) as u32).collect();
    let twins = EmbeddingBundle::new("twins", 2, feats, labels, 2).unwrap();
    check("gbc", gbc(&twins, GbcCovariance::Diagonal, 1e-4).unwrap(), -1.0);

    let xs = [1.0f32, 2.0, 4.0, 7.0, 11.0];
    let source = EmbeddingBundle::new("s", 1, xs.to_vec(), vec![0; 5], 1).unwrap();
    let target = EmbeddingBundle::new("t", 1, xs.iter().map(|v| v + 3.0).collect(), vec![0; 5], 1).unwrap();
    check("fid", fid(&source, &target, 1e-6).unwrap(), 9.0);

    let record = TransferRecord::new("c", 0.8, 0.6);
    check("rtp", rtp(&record).unwrap(), 0.25);
    check("tg", tg(&record).unwrap(), 0.75);

    if failures.is_empty() {
        outcome(true, "NCE, LEEP, GBC, FID, RTP and TG anchors exact to 1e-9")
    } else {
        outcome(false, failures.join("; "))
    }
}

fn knn_protocol() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let cfg = KnnConfig::default();

    let separable = clustered(&SyntheticSpec {
        n: 1000,
        d: 16,
        classes: 5,
        separation: 20.0,
        source_classes: None,
        ..Default::default()
    });
    let sep = knn_score(&separable, &cfg).unwrap().value;
    if sep != 1.0 {
        failures.push(format!("separable score {sep}"));
    }

    let mut worst_chance: f64 = 0.0;
    for seed in 0..20 {
        let b = noise(10_000, 16, 10, seed);
        let v = knn_score(&b, &KnnConfig { seed, ..cfg.clone() }).unwrap().value;
        worst_chance = worst_chance.max((v - 0.1).abs());
    }
    if worst_chance > 0.03 {
        failures.push(format!("chance deviation {worst_chance:.4}"));
    }

    let noisy = clustered(&SyntheticSpec {
        n: 2000,
        d: 16,
        classes: 5,
        separation: 2.0,
        source_classes: None,
        seed: 5,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scaled = Vec::with_capacity(noisy.features().len());
    for i in 0..noisy.n() {
        let f: f32 = rng.random_range(0.01..100.0);
        scaled.extend(noisy.row(i).iter().map(|v| v * f));
    }
    let rescaled = EmbeddingBundle::new("scaled", noisy.d(), scaled, noisy.labels().to_vec(), 5).unwrap();
    let (a, b) = (knn_score(&noisy, &cfg).unwrap().value, knn_score(&rescaled, &cfg).unwrap().value);
    if a.to_bits() != b.to_bits() {
        failures.push(format!("rescaled score {b} differs from {a}"));
    }

    let big = clustered(&SyntheticSpec {
        n: 5000,
        d: 32,
        classes: 10,
        separation: 3.0,
        source_classes: None,
        seed: 7,
        ..Default::default()
    });
    let single = knn_score(&big, &cfg).unwrap().value;
    let cv3 = knn_score(&big, &KnnConfig { mode: KnnMode::Cv3, ..cfg.clone() }).unwrap().value;
    if (single - cv3).abs() > 0.02 {
        failures.push(format!("single {single:.4} vs cv3 {cv3:.4}"));
    }

    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        failures.push(format!("took {elapsed:.1?}"));
    }
    if failures.is_empty() {
        outcome(
            true,
            format!(
                "separable 1.0, max |chance - 0.1| {worst_chance:.4}, rescaling bit-identical, single {single:.4} vs cv3 {cv3:.4}, {elapsed:.1?}"
            ),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

const PIPELINE_METRICS: [&str; 3] = ["knn", "gbc", "leep"];

/// Scores a candidate pool with the pipeline metrics plus a white-noise column.
fn pool_scores(seed: u64) -> (ScoreTable, Vec<TransferRecord>) {
    let base = SyntheticSpec {
        n: 500,
        d: 32,
        classes: 5,
        ..Default::default()
    };
    let pool = candidate_pool(20, &base, 0.5, 5.0, 0.03, seed);
    let ids: Vec<String> = PIPELINE_METRICS.iter().map(|s| s.to_string()).collect();
    let mut table = ScoreTable::default();
    let mut perf = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for cand in &pool {
        for o in run_metrics(&cand.bundle, &ids, &Default::default(), seed).unwrap() {
            table.push(&cand.id, &o.metric, o.result.unwrap().value);
        }
        table.push(&cand.id, "noise", rng.random_range(0.0..1.0));
        perf.push(TransferRecord::new(&cand.id, cand.perf_p, cand.perf_ri));
    }
    (table, perf)
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let mut per_metric: HashMap<String, Vec<f64>> = HashMap::new();
    for seed in 0..20 {
        let (table, perf) = pool_scores(seed);
        let report = evaluate(&table, &perf, Target::Absolute, Measure::TauW, &EvaluateOptions::default()).unwrap();
        for r in report.results {
            per_metric.entry(r.metric).or_default().push(r.value.unwrap_or(f64::NAN));
        }
    }
    let medians: HashMap<String, f64> = per_metric.into_iter().map(|(k, v)| (k, median(v))).collect();
    let mut pass = PIPELINE_METRICS.iter().all(|m| medians[*m] >= 0.7);
    pass &= medians["noise"].abs() <= 0.3;
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    let mut names: Vec<_> = medians.keys().cloned().collect();
    names.sort();
    let listing: Vec<String> = names.iter().map(|k| format!("{k} {:.3}", medians[k])).collect();
    outcome(pass, format!("median tau_w over 20 seeds: {}; {elapsed:.1?}", listing.join(", ")))
}

fn orientation_law() -> Outcome {
    let (table, perf) = pool_scores(3);
    let mut compared = 0;
    let mut failures = Vec::new();
    for metric in table.metrics() {
        let mut flipped = table.clone();
        for e in flipped.entries.iter_mut().filter(|e| e.metric == metric) {
            e.value = -e.value;
        }
        flipped.orientations.insert(metric.clone(), table.orientation(&metric).flipped());
        for target in [Target::Absolute, Target::Relative] {
            for measure in Measure::ALL {
                for symmetric in [false, true] {
                    let options = EvaluateOptions {
                        symmetric_tau_w: symmetric,
                        ..Default::default()
                    };
                    let a = evaluate(&table, &perf, target, measure, &options).unwrap();
                    let b = evaluate(&flipped, &perf, target, measure, &options).unwrap();
                    compared += 1;
                    if a != b {
                        failures.push(format!("{metric} {measure} {target}"));
                    }
                }
            }
        }
    }
    let lower = Orientation::LowerBetter;
    if lower.flipped().flipped() != lower {
        failures.push("orientation flip is not an involution".into());
    }
    if failures.is_empty() {
        outcome(true, format!("{compared} report pairs identical"))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn runtime_report() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_xfermetric"))
        .args(["bench", "--n", "2048", "--d", "512", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    if !status.status.success() {
        return outcome(false, format!("bench failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let rows = xfermetric::io::read_scores(&out).unwrap();
    let times: Vec<(String, f64)> = rows.iter().map(|r| (r.metric.clone(), r.wall_time_s.unwrap_or(f64::NAN))).collect();
    let expected = MetricRegistry::new().ids();
    let complete = expected.iter().all(|id| times.iter().any(|(m, _)| m == id));
    let all_fast = times.iter().all(|(_, t)| *t < 60.0);
    let fastest = times.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|t| t.0.clone()).unwrap_or_default();
    let slowest = times.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap_or_default();
    outcome(
        complete && all_fast && fastest == "num_c",
        format!(
            "{} metrics timed, fastest {fastest}, slowest {} at {:.2} s",
            times.len(),
            slowest.0,
            slowest.1
        ),
    )
}

fn k_sweep() -> Outcome {
    let b = clustered(&SyntheticSpec {
        n: 5000,
        d: 32,
        classes: 10,
        separation: 4.0,
        source_classes: None,
        seed: 12,
        ..Default::default()
    });
    let sweep = knn_sweep(&b, &[25, 50, 100, 200, 400], &KnnConfig::default()).unwrap();
    let lo = sweep.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let listing: Vec<String> = sweep.iter().map(|(k, s)| format!("{k}:{s:.4}")).collect();
    outcome(hi - lo < 0.05, format!("span {:.4} ({})", hi - lo, listing.join(" ")))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 7] = [
        ("formula oracles", formula_oracles),
        ("analytic anchors", analytic_anchors),
        ("k-NN protocol", knn_protocol),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("orientation law", orientation_law),
        ("runtime report", runtime_report),
        ("k-sweep robustness", k_sweep),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
