//! Transferability metrics, domain distances and the evaluation harness
//! that correlates them with measured transfer performance.

pub mod bundle;
pub mod distance;
pub mod evaluation;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod numerics;
pub mod synthetic;

pub use bundle::{read_bundle, write_bundle, EmbeddingBundle};
pub use distance::{DistanceParams, DistanceScore};
pub use evaluation::{evaluate, CorrelationReport, Measure, Target, TransferRecord};
pub use knn::{knn_score, knn_sweep, KnnConfig, KnnMode};
pub use metrics::{run_metrics, MetricDescriptor, MetricError, MetricRegistry, MetricScore, Orientation};
