//! Transferability metrics over a single target bundle, behind a uniform
//! registry so callers can request them by id.

mod gaussian;
mod label;
mod logme;
mod pairwise;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, EmbeddingBundle};
use crate::knn::{knn_score, KnnConfig, KnnMode};
use crate::numerics::NumericsError;

pub use gaussian::{
    bhattacharyya_diag, coding_rate, gbc, h_score, tmi, transrate, transrate_raw, GbcCovariance,
};
pub use label::{leep, leep_soft, nce, nce_from_pairs, nleep, num_c, NleepConfig};
pub use logme::{logme, FeatureSpectrum, LogMeConfig, LogMeResult};
pub use pairwise::{average_ranks, lfc, parc, spearman};

/// Named real-valued hyperparameters. Integer and flag parameters are stored
/// as reals and rounded on use.
pub type Hyperparameters = BTreeMap<String, f64>;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric requires source predictions but the bundle has none")]
    MissingPredictions,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },
    #[error("sample {index} has a zero-norm feature vector")]
    ZeroNorm { index: usize },
    #[error("{0}")]
    Degenerate(String),
    #[error("unknown metric: {0}")]
    UnknownMetric(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    /// Sign that turns a raw value into a higher-better one.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::HigherBetter => 1.0,
            Orientation::LowerBetter => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherBetter => Orientation::LowerBetter,
            Orientation::LowerBetter => Orientation::HigherBetter,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::HigherBetter => "higher-better",
            Orientation::LowerBetter => "lower-better",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub id: String,
    pub requires_predictions: bool,
    pub orientation: Orientation,
    pub hyperparameters: Hyperparameters,
}

impl MetricDescriptor {
    pub fn new(id: &str, requires_predictions: bool, defaults: &[(&str, f64)]) -> Self {
        Self {
            id: id.to_string(),
            requires_predictions,
            orientation: Orientation::HigherBetter,
            hyperparameters: defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Raw result of one metric evaluation, before timing is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricOutput {
    pub value: f64,
    pub warnings: Vec<String>,
}

impl From<f64> for MetricOutput {
    fn from(value: f64) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: String,
    pub value: f64,
    /// Seconds.
    pub wall_time: f64,
    pub hyperparameters: Hyperparameters,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub trait TransferMetric: Send + Sync {
    fn descriptor(&self) -> MetricDescriptor;

    /// `params` holds every declared hyperparameter, defaults filled in.
    fn compute(
        &self,
        bundle: &EmbeddingBundle,
        params: &Hyperparameters,
        seed: u64,
    ) -> Result<MetricOutput, MetricError>;
}

fn param(params: &Hyperparameters, name: &str) -> f64 {
    params[name]
}

fn count_param(params: &Hyperparameters, name: &str, min: usize) -> Result<usize, MetricError> {
    let v = param(params, name);
    if !v.is_finite() || v < min as f64 || v.fract() != 0.0 {
        return Err(MetricError::InvalidHyperparameter(format!(
            "{name} must be an integer >= {min}, got {v}"
        )));
    }
    Ok(v as usize)
}

fn positive_param(params: &Hyperparameters, name: &str) -> Result<f64, MetricError> {
    let v = param(params, name);
    if !(v.is_finite() && v > 0.0) {
        return Err(MetricError::InvalidHyperparameter(format!("{name} must be positive, got {v}")));
    }
    Ok(v)
}

fn flag_param(params: &Hyperparameters, name: &str) -> bool {
    param(params, name) != 0.0
}

type ComputeFn = fn(&EmbeddingBundle, &Hyperparameters, u64) -> Result<MetricOutput, MetricError>;

struct Builtin {
    id: &'static str,
    requires_predictions: bool,
    defaults: &'static [(&'static str, f64)],
    compute: ComputeFn,
}

impl TransferMetric for Builtin {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor::new(self.id, self.requires_predictions, self.defaults)
    }

    fn compute(
        &self,
        bundle: &EmbeddingBundle,
        params: &Hyperparameters,
        seed: u64,
    ) -> Result<MetricOutput, MetricError> {
        (self.compute)(bundle, params, seed)
    }
}

fn knn_metric(b: &EmbeddingBundle, p: &Hyperparameters, seed: u64) -> Result<MetricOutput, MetricError> {
    let fraction = param(p, "fraction");
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MetricError::InvalidHyperparameter(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let cfg = KnnConfig {
        k: count_param(p, "k", 1)?,
        fraction,
        seed,
        mode: if flag_param(p, "cv3") { KnnMode::Cv3 } else { KnnMode::Single },
        stratified: flag_param(p, "stratified"),
    };
    let r = knn_score(b, &cfg)?;
    let warnings = r
        .clamped_k
        .map(|k| format!("k clamped to {k}"))
        .into_iter()
        .collect();
    Ok(MetricOutput {
        value: r.value,
        warnings,
    })
}

fn nleep_metric(b: &EmbeddingBundle, p: &Hyperparameters, seed: u64) -> Result<MetricOutput, MetricError> {
    let components = count_param(p, "components", 0)?;
    let pca_energy = positive_param(p, "pca_energy")?;
    if pca_energy > 1.0 {
        return Err(MetricError::InvalidHyperparameter(format!(
            "pca_energy must be at most 1, got {pca_energy}"
        )));
    }
    let cfg = NleepConfig {
        components: (components > 0).then_some(components),
        pca_energy,
        restarts: count_param(p, "restarts", 1)?,
        seed,
    };
    nleep(b, &cfg).map(Into::into)
}

fn logme_metric(b: &EmbeddingBundle, p: &Hyperparameters, _: u64) -> Result<MetricOutput, MetricError> {
    let cfg = LogMeConfig {
        max_iter: count_param(p, "max_iter", 1)?,
        tol: positive_param(p, "tol")?,
    };
    let r = logme(b, &cfg)?;
    let warnings = if r.converged {
        Vec::new()
    } else {
        vec![format!("evidence maximization did not converge in {} iterations", cfg.max_iter)]
    };
    Ok(MetricOutput {
        value: r.value,
        warnings,
    })
}

fn gbc_metric(b: &EmbeddingBundle, p: &Hyperparameters, _: u64) -> Result<MetricOutput, MetricError> {
    let cov = if flag_param(p, "spherical") {
        GbcCovariance::Spherical
    } else {
        GbcCovariance::Diagonal
    };
    gbc(b, cov, positive_param(p, "eps")?).map(Into::into)
}

fn transrate_metric(b: &EmbeddingBundle, p: &Hyperparameters, _: u64) -> Result<MetricOutput, MetricError> {
    let (value, raw) = transrate_raw(b, positive_param(p, "eps")?)?;
    let warnings = if raw < 0.0 {
        vec![format!("raw value {raw:e} clamped")]
    } else {
        Vec::new()
    };
    Ok(MetricOutput { value, warnings })
}

static BUILTINS: &[Builtin] = &[
    Builtin {
        id: "knn",
        requires_predictions: false,
        defaults: &[("k", 200.0), ("fraction", 0.8), ("cv3", 0.0), ("stratified", 1.0)],
        compute: knn_metric,
    },
    Builtin {
        id: "num_c",
        requires_predictions: false,
        defaults: &[],
        compute: |b, _, _| Ok(num_c(b).into()),
    },
    Builtin {
        id: "nce",
        requires_predictions: true,
        defaults: &[],
        compute: |b, _, _| nce(b).map(Into::into),
    },
    Builtin {
        id: "leep",
        requires_predictions: true,
        defaults: &[],
        compute: |b, _, _| leep(b).map(Into::into),
    },
    Builtin {
        id: "nleep",
        requires_predictions: false,
        defaults: &[("components", 0.0), ("pca_energy", 0.8), ("restarts", 1.0)],
        compute: nleep_metric,
    },
    Builtin {
        id: "logme",
        requires_predictions: false,
        defaults: &[("max_iter", 100.0), ("tol", 1e-6)],
        compute: logme_metric,
    },
    Builtin {
        id: "gbc",
        requires_predictions: false,
        defaults: &[("eps", 1e-4), ("spherical", 0.0)],
        compute: gbc_metric,
    },
    Builtin {
        id: "h_score",
        requires_predictions: false,
        defaults: &[("eps", 1e-4)],
        compute: |b, p, _| h_score(b, positive_param(p, "eps")?).map(Into::into),
    },
    Builtin {
        id: "transrate",
        requires_predictions: false,
        defaults: &[("eps", 1e-4)],
        compute: transrate_metric,
    },
    Builtin {
        id: "parc",
        requires_predictions: false,
        defaults: &[("sample_cap", 4096.0)],
        compute: |b, p, seed| parc(b, count_param(p, "sample_cap", 3)?, seed).map(Into::into),
    },
    Builtin {
        id: "tmi",
        requires_predictions: false,
        defaults: &[("eps", 1e-4)],
        compute: |b, p, _| Ok(tmi(b, positive_param(p, "eps")?).into()),
    },
    Builtin {
        id: "lfc",
        requires_predictions: false,
        defaults: &[("sample_cap", 4096.0)],
        compute: |b, p, seed| lfc(b, count_param(p, "sample_cap", 3)?, seed).map(Into::into),
    },
];

/// Outcome of one requested metric inside a batch.
#[derive(Debug)]
pub struct MetricOutcome {
    pub metric: String,
    pub result: Result<MetricScore, MetricError>,
}

pub struct MetricRegistry {
    metrics: Vec<Box<dyn TransferMetric>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricRegistry {
    /// Registry holding the built-in metrics in their stable order.
    pub fn new() -> Self {
        let metrics = BUILTINS
            .iter()
            .map(|b| Box::new(Builtin { ..*b }) as Box<dyn TransferMetric>)
            .collect();
        Self { metrics }
    }

    pub fn register(&mut self, metric: Box<dyn TransferMetric>) -> Result<(), MetricError> {
        let id = metric.descriptor().id;
        if self.get(&id).is_some() || id == "all" {
            return Err(MetricError::InvalidHyperparameter(format!("metric id {id} already registered")));
        }
        self.metrics.push(metric);
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.descriptor().id).collect()
    }

    pub fn descriptors(&self) -> Vec<MetricDescriptor> {
        self.metrics.iter().map(|m| m.descriptor()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&dyn TransferMetric> {
        self.metrics
            .iter()
            .find(|m| m.descriptor().id == id)
            .map(|m| m.as_ref())
    }

    /// Expands `all` and checks that every id exists.
    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<String>, MetricError> {
        let mut out = Vec::new();
        for id in ids {
            let id = id.as_ref();
            if id == "all" {
                out.extend(self.ids());
            } else if self.get(id).is_some() {
                out.push(id.to_string());
            } else {
                return Err(MetricError::UnknownMetric(id.to_string()));
            }
        }
        Ok(out)
    }

    /// Defaults for `id` merged with `overrides`; unknown names are rejected.
    pub fn hyperparameters(&self, id: &str, overrides: Option<&Hyperparameters>) -> Result<Hyperparameters, MetricError> {
        let metric = self.get(id).ok_or_else(|| MetricError::UnknownMetric(id.to_string()))?;
        let mut params = metric.descriptor().hyperparameters;
        for (name, &value) in overrides.into_iter().flatten() {
            match params.get_mut(name) {
                Some(slot) => *slot = value,
                None => {
                    return Err(MetricError::InvalidHyperparameter(format!("{id} has no parameter {name}")))
                }
            }
        }
        Ok(params)
    }

    fn run_one(&self, bundle: &EmbeddingBundle, id: &str, params: Hyperparameters, seed: u64) -> MetricOutcome {
        let metric = self.get(id).expect("ids resolved before running");
        let start = Instant::now();
        let result = metric.compute(bundle, &params, seed).and_then(|out| {
            if !out.value.is_finite() {
                return Err(MetricError::Degenerate(format!("non-finite value {}", out.value)));
            }
            Ok(MetricScore {
                metric: id.to_string(),
                value: out.value,
                wall_time: start.elapsed().as_secs_f64(),
                hyperparameters: params,
                warnings: out.warnings,
            })
        });
        if let Err(e) = &result {
            log::warn!("{id}: {e}");
        }
        MetricOutcome {
            metric: id.to_string(),
            result,
        }
    }

    /// Runs the requested metrics in order. Configuration problems (unknown
    /// ids or parameters) fail the call; per-metric failures do not.
    pub fn run(
        &self,
        bundle: &EmbeddingBundle,
        ids: &[String],
        overrides: &BTreeMap<String, Hyperparameters>,
        seed: u64,
        parallel: bool,
    ) -> Result<Vec<MetricOutcome>, MetricError> {
        let ids = self.resolve(ids)?;
        for id in overrides.keys() {
            if self.get(id).is_none() {
                return Err(MetricError::UnknownMetric(id.clone()));
            }
        }
        let jobs = ids
            .iter()
            .map(|id| Ok((id.as_str(), self.hyperparameters(id, overrides.get(id))?)))
            .collect::<Result<Vec<_>, MetricError>>()?;
        let outcomes = if parallel {
            jobs.into_par_iter()
                .map(|(id, params)| self.run_one(bundle, id, params, seed))
                .collect()
        } else {
            jobs.into_iter()
                .map(|(id, params)| self.run_one(bundle, id, params, seed))
                .collect()
        };
        Ok(outcomes)
    }
}

/// Sequential batch over the built-in registry.
pub fn run_metrics(
    bundle: &EmbeddingBundle,
    ids: &[String],
    overrides: &BTreeMap<String, Hyperparameters>,
    seed: u64,
) -> Result<Vec<MetricOutcome>, MetricError> {
    MetricRegistry::new().run(bundle, ids, overrides, seed, false)
}
