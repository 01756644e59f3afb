//! Transfer-performance targets and the rank/linear correlations used to
//! judge how well metric scores predict them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Orientation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("perf_P must be positive, got {0}")]
    NonPositivePerf(f64),
    #[error("record has no {0} estimate")]
    MissingEstimate(&'static str),
    #[error("est_P must be positive after orientation adjustment, got {0}")]
    InvalidEstimate(f64),
    #[error("length mismatch: {0} scores vs {1} performances")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("every pair is tied; correlation undefined")]
    AllTied,
    #[error("constant input; correlation undefined")]
    Constant,
    #[error("best performance must be positive, got {0}")]
    NonPositiveBest(f64),
    #[error("duplicate entry: {0}")]
    Duplicate(String),
    #[error("candidates missing from the performance table: {0}")]
    Unaligned(String),
    #[error("need at least 2 aligned candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("unknown {kind}: {value}")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub candidate: String,
    pub perf_p: f64,
    pub perf_ri: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_ri: Option<f64>,
}

impl TransferRecord {
    pub fn new(candidate: impl Into<String>, perf_p: f64, perf_ri: f64) -> Self {
        Self {
            candidate: candidate.into(),
            perf_p,
            perf_ri,
            est_p: None,
            est_ri: None,
        }
    }
}

/// Relative transfer performance `(perf_P - perf_RI) / perf_P`.
pub fn rtp(record: &TransferRecord) -> Result<f64, EvalError> {
    if !(record.perf_p > 0.0) {
        return Err(EvalError::NonPositivePerf(record.perf_p));
    }
    Ok((record.perf_p - record.perf_ri) / record.perf_p)
}

/// Transfer gap `1 - RTP`.
pub fn tg(record: &TransferRecord) -> Result<f64, EvalError> {
    Ok(1.0 - rtp(record)?)
}

/// Relative difference between pretrained and random-init metric scores,
/// after turning lower-better scores into higher-better ones.
pub fn rtp_metric(record: &TransferRecord, orientation: Orientation) -> Result<f64, EvalError> {
    let sign = orientation.sign();
    let p = sign * record.est_p.ok_or(EvalError::MissingEstimate("est_P"))?;
    let ri = sign * record.est_ri.ok_or(EvalError::MissingEstimate("est_RI"))?;
    if !(p > 0.0) {
        return Err(EvalError::InvalidEstimate(p));
    }
    Ok((p - ri) / p)
}

fn check_pair(scores: &[f64], perfs: &[f64], min: usize) -> Result<(), EvalError> {
    if scores.len() != perfs.len() {
        return Err(EvalError::LengthMismatch(scores.len(), perfs.len()));
    }
    if scores.len() < min {
        return Err(EvalError::TooShort {
            needed: min,
            got: scores.len(),
        });
    }
    if scores.iter().chain(perfs).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 0-based descending ranks (0 = largest), ties sharing their average rank.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn tau_w_with_ranks(scores: &[f64], perfs: &[f64], ranks: &[f64]) -> f64 {
    let n = scores.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 1.0 / (ranks[i] + 1.0) + 1.0 / (ranks[j] + 1.0);
            num += w * sgn(scores[i] - scores[j]) * sgn(perfs[i] - perfs[j]);
            den += w;
        }
    }
    num / den
}

/// Weighted Kendall's tau with hyperbolic weights on performance ranks.
pub fn weighted_kendall_tau(scores: &[f64], perfs: &[f64]) -> Result<f64, EvalError> {
    check_pair(scores, perfs, 2)?;
    Ok(tau_w_with_ranks(scores, perfs, &descending_ranks(perfs)))
}

/// Mean of the weighted tau under performance-derived and score-derived
/// rank weights.
pub fn weighted_kendall_tau_symmetric(scores: &[f64], perfs: &[f64]) -> Result<f64, EvalError> {
    check_pair(scores, perfs, 2)?;
    let by_perf = tau_w_with_ranks(scores, perfs, &descending_ranks(perfs));
    let by_score = tau_w_with_ranks(scores, perfs, &descending_ranks(scores));
    Ok(0.5 * (by_perf + by_score))
}

/// Kendall's tau-b.
pub fn kendall_tau(scores: &[f64], perfs: &[f64]) -> Result<f64, EvalError> {
    check_pair(scores, perfs, 2)?;
    let n = scores.len();
    let (mut s, mut tied_a, mut tied_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (sgn(scores[i] - scores[j]), sgn(perfs[i] - perfs[j]));
            s += a * b;
            tied_a += (a == 0.0) as u8 as f64;
            tied_b += (b == 0.0) as u8 as f64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let den = ((pairs - tied_a) * (pairs - tied_b)).sqrt();
    if den == 0.0 {
        return Err(EvalError::AllTied);
    }
    Ok((s / den).clamp(-1.0, 1.0))
}

/// Pearson product-moment correlation.
pub fn pearson_rho(scores: &[f64], perfs: &[f64]) -> Result<f64, EvalError> {
    check_pair(scores, perfs, 2)?;
    let n = scores.len() as f64;
    let ms = scores.iter().sum::<f64>() / n;
    let mp = perfs.iter().sum::<f64>() / n;
    let (mut sp, mut ss, mut pp) = (0.0, 0.0, 0.0);
    for (s, p) in scores.iter().zip(perfs) {
        sp += (s - ms) * (p - mp);
        ss += (s - ms).powi(2);
        pp += (p - mp).powi(2);
    }
    if ss == 0.0 || pp == 0.0 {
        return Err(EvalError::Constant);
    }
    Ok((sp / (ss * pp).sqrt()).clamp(-1.0, 1.0))
}

/// Performance of the top-scored candidate relative to the best one.
/// Score ties go to the higher performance unless `pessimistic`.
pub fn rel_at_1(scores: &[f64], perfs: &[f64], pessimistic: bool) -> Result<f64, EvalError> {
    check_pair(scores, perfs, 1)?;
    let best = perfs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return Err(EvalError::NonPositiveBest(best));
    }
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied = perfs.iter().zip(scores).filter(|(_, &s)| s == top).map(|(&p, _)| p);
    let pick = if pessimistic {
        tied.fold(f64::INFINITY, f64::min)
    } else {
        tied.fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(pick / best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "tau_w")]
    TauW,
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "pearson")]
    Pearson,
    #[serde(rename = "rel1")]
    Rel1,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::TauW, Measure::Tau, Measure::Pearson, Measure::Rel1];

    pub fn id(self) -> &'static str {
        match self {
            Measure::TauW => "tau_w",
            Measure::Tau => "tau",
            Measure::Pearson => "pearson",
            Measure::Rel1 => "rel1",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Measure {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| EvalError::Unknown {
                kind: "measure",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Absolute => "absolute",
            Target::Relative => "relative",
        })
    }
}

impl FromStr for Target {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absolute" => Ok(Target::Absolute),
            "relative" => Ok(Target::Relative),
            _ => Err(EvalError::Unknown {
                kind: "target",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    /// Use the symmetrized weighted tau.
    pub symmetric_tau_w: bool,
    pub pessimistic_rel1: bool,
    /// Negate lower-better columns before correlating.
    pub invert_lower_better: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            symmetric_tau_w: false,
            pessimistic_rel1: false,
            invert_lower_better: true,
        }
    }
}

pub fn correlate(measure: Measure, scores: &[f64], perfs: &[f64], options: &EvaluateOptions) -> Result<f64, EvalError> {
    match measure {
        Measure::TauW if options.symmetric_tau_w => weighted_kendall_tau_symmetric(scores, perfs),
        Measure::TauW => weighted_kendall_tau(scores, perfs),
        Measure::Tau => kendall_tau(scores, perfs),
        Measure::Pearson => pearson_rho(scores, perfs),
        Measure::Rel1 => rel_at_1(scores, perfs, options.pessimistic_rel1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub candidate: String,
    pub metric: String,
    pub value: f64,
}

/// Long-format metric scores plus each metric's orientation (metrics not
/// listed are higher-better).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
    pub orientations: BTreeMap<String, Orientation>,
}

impl ScoreTable {
    pub fn push(&mut self, candidate: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.entries.push(ScoreEntry {
            candidate: candidate.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn orientation(&self, metric: &str) -> Orientation {
        self.orientations
            .get(metric)
            .copied()
            .unwrap_or(Orientation::HigherBetter)
    }

    pub fn metrics(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.metric.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub value: Option<f64>,
    pub n_effective: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub target: Target,
    pub measure: Measure,
    pub n_candidates: usize,
    pub results: Vec<MetricCorrelation>,
}

/// Correlates every metric column with measured performance. Candidates
/// lacking a finite score for a metric are dropped for that metric only.
pub fn evaluate(
    scores: &ScoreTable,
    perf: &[TransferRecord],
    target: Target,
    measure: Measure,
    options: &EvaluateOptions,
) -> Result<CorrelationReport, EvalError> {
    let mut truth: BTreeMap<&str, f64> = BTreeMap::new();
    for r in perf {
        let value = match target {
            Target::Absolute => r.perf_p,
            Target::Relative => rtp(r)?,
        };
        if truth.insert(&r.candidate, value).is_some() {
            return Err(EvalError::Duplicate(format!("candidate {}", r.candidate)));
        }
    }

    let mut columns: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for e in &scores.entries {
        if !truth.contains_key(e.candidate.as_str()) {
            missing.insert(e.candidate.as_str());
            continue;
        }
        let col = columns.entry(&e.metric).or_default();
        if col.insert(&e.candidate, e.value).is_some() {
            return Err(EvalError::Duplicate(format!("{} / {}", e.candidate, e.metric)));
        }
    }
    if !missing.is_empty() {
        let list: Vec<&str> = missing.into_iter().collect();
        return Err(EvalError::Unaligned(list.join(", ")));
    }
    let aligned: BTreeSet<&str> = columns.values().flat_map(|c| c.keys().copied()).collect();
    if aligned.len() < 2 {
        return Err(EvalError::TooFewCandidates(aligned.len()));
    }

    let results = columns
        .into_iter()
        .map(|(metric, col)| {
            let sign = if options.invert_lower_better {
                scores.orientation(metric).sign()
            } else {
                1.0
            };
            let (xs, ys): (Vec<f64>, Vec<f64>) = col
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(|(c, v)| (sign * v, truth[c]))
                .unzip();
            let n_effective = xs.len();
            let outcome = if n_effective < 2 {
                Err(EvalError::TooFewCandidates(n_effective))
            } else {
                correlate(measure, &xs, &ys, options)
            };
            MetricCorrelation {
                metric: metric.to_string(),
                n_effective,
                value: outcome.as_ref().ok().copied(),
                error: outcome.err().map(|e| e.to_string()),
            }
        })
        .collect();
    Ok(CorrelationReport {
        target,
        measure,
        n_candidates: aligned.len(),
        results,
    })
}
