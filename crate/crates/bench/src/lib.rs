//! Shared fixtures for the benchmarks.

use xfermetric::synthetic::{clustered, SyntheticSpec};
use xfermetric::EmbeddingBundle;

/// Clustered bundle with a 100-way source head.
pub fn fixture(n: usize, d: usize, seed: u64) -> EmbeddingBundle {
    clustered(&SyntheticSpec {
        n,
        d,
        classes: 10,
        separation: 3.0,
        source_classes: Some(100),
        temperature: 1.0,
        seed,
    })
}
