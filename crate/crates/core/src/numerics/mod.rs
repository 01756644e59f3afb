//! Dense numerical kernels shared by the metrics: regularized covariance,
//! PSD log-determinant and square root, diagonal GMM fitting, heat-kernel
//! traces and exact optimal transport.
//!
//! Covariances use divisor `n` throughout.

mod gmm;
mod heat;
mod linalg;
mod ot;

use thiserror::Error;

pub use gmm::{gmm_fit, GmmConfig, GmmModel};
pub use heat::{heat_trace, knn_graph, log_grid, HeatTraceConfig, NormalizedLaplacian};
pub use linalg::{
    center_columns, column_means, logdet_cholesky, logdet_psd, pca_project, reg_covariance,
    sqrtm_psd, sqrtm_psd_product, symmetrize, PsdMatrix, LOGDET_FLOOR, NEG_EIG_TOL, SYMMETRY_TOL,
};
pub use ot::{ot_exact, ot_plan, TransportPlan, WEIGHT_SUM_TOL};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite input")]
    NonFinite,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigenvalue {value:e} is too negative for a covariance with trace {trace:e}")]
    NegativeEigenvalue { value: f64, trace: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("mixture component {0} lost all responsibility mass")]
    EmptyComponent(usize),
    #[error("{side} weights sum to {sum}, expected 1")]
    WeightSum { side: String, sum: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
}
