//! On-disk embedding bundles and the in-memory container every metric reads.
//!
//! A bundle directory holds a UTF-8 `manifest.json`, a row-major little-endian
//! `f32` feature matrix, `u32` labels, optional row-stochastic `f32` source
//! predictions and an optional `class_names.txt` (one name per line).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const PREDICTIONS_FILE: &str = "predictions.bin";
pub const CLASS_NAMES_FILE: &str = "class_names.txt";

/// Tolerance on prediction row sums.
pub const STOCHASTIC_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("size mismatch for {file}: manifest implies {expected} bytes, found {found}")]
    SizeMismatch {
        file: String,
        expected: u64,
        found: u64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite feature value at sample {row}, dimension {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label out of range: sample {index} has label {label}, num_classes is {num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: usize,
    },
    #[error("class {0} has no samples and the bundle is not flagged as a class subset")]
    EmptyClass(usize),
    #[error("prediction row {row} is not stochastic: {reason}")]
    NotStochastic { row: usize, reason: String },
    #[error("split needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub features: String,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
}

/// Sidecar manifest describing a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    /// Zero when no predictions are stored.
    pub num_source_classes: usize,
    pub dtype: String,
    pub byte_order: String,
    pub files: BundleFiles,
    /// Set for class-subset slices, which may leave some classes empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub class_subset: bool,
    /// Free-form notes (source model, layer, init mode, dataset, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl BundleManifest {
    fn check_tags(&self) -> Result<(), BundleError> {
        if self.dtype != "f32" {
            return Err(BundleError::Manifest(format!(
                "dtype must be \"f32\", got {:?}",
                self.dtype
            )));
        }
        if self.byte_order != "little" {
            return Err(BundleError::Manifest(format!(
                "byte_order must be \"little\", got {:?}",
                self.byte_order
            )));
        }
        if self.num_classes == 0 {
            return Err(BundleError::Manifest("num_classes must be positive".into()));
        }
        if self.num_source_classes > 0 && self.files.predictions.is_none() {
            return Err(BundleError::Manifest(
                "num_source_classes > 0 but files.predictions is absent".into(),
            ));
        }
        if self.num_source_classes == 0 && self.files.predictions.is_some() {
            return Err(BundleError::Manifest(
                "files.predictions given but num_source_classes is 0".into(),
            ));
        }
        Ok(())
    }
}

/// A named dataset split: `n` feature rows of width `d`, labels in `[0, C)`
/// and optional `n x Z` source-softmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    name: String,
    n: usize,
    d: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
    num_classes: usize,
    predictions: Option<Vec<f32>>,
    num_source_classes: usize,
    class_names: Option<Vec<String>>,
    class_subset: bool,
    provenance: BTreeMap<String, serde_json::Value>,
}

impl EmbeddingBundle {
    /// Builds and validates a bundle from row-major features.
    pub fn new(
        name: impl Into<String>,
        d: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self, BundleError> {
        let n = labels.len();
        if d == 0 {
            return Err(BundleError::Shape("feature dimension must be positive".into()));
        }
        if features.len() != n * d {
            return Err(BundleError::Shape(format!(
                "{} feature values for n={n}, d={d}",
                features.len()
            )));
        }
        let bundle = Self {
            name: name.into(),
            n,
            d,
            features,
            labels,
            num_classes,
            predictions: None,
            num_source_classes: 0,
            class_names: None,
            class_subset: false,
            provenance: BTreeMap::new(),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Attaches an `n x z` row-major prediction matrix.
    pub fn with_predictions(mut self, z: usize, predictions: Vec<f32>) -> Result<Self, BundleError> {
        if z == 0 || predictions.len() != self.n * z {
            return Err(BundleError::Shape(format!(
                "{} prediction values for n={}, Z={z}",
                predictions.len(),
                self.n
            )));
        }
        self.predictions = Some(predictions);
        self.num_source_classes = z;
        self.validate()?;
        Ok(self)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self, BundleError> {
        if names.len() != self.num_classes {
            return Err(BundleError::Shape(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    /// Marks the bundle as a class-subset slice, allowing empty classes.
    pub fn as_class_subset(mut self) -> Self {
        self.class_subset = true;
        self
    }

    pub fn with_provenance(mut self, key: impl Into<String>, value: serde_json::Value) -> Self {
        self.provenance.insert(key.into(), value);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Checks every bundle invariant.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.num_classes == 0 {
            return Err(BundleError::Shape("num_classes must be positive".into()));
        }
        if self.n == 0 {
            return Err(BundleError::Shape("bundle has no samples".into()));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(BundleError::NonFinite {
                row: pos / self.d,
                col: pos % self.d,
            });
        }
        let mut counts = vec![0usize; self.num_classes];
        for (index, &label) in self.labels.iter().enumerate() {
            if label as usize >= self.num_classes {
                return Err(BundleError::LabelOutOfRange {
                    index,
                    label,
                    num_classes: self.num_classes,
                });
            }
            counts[label as usize] += 1;
        }
        if !self.class_subset {
            if let Some(c) = counts.iter().position(|&c| c == 0) {
                return Err(BundleError::EmptyClass(c));
            }
        }
        if let Some(preds) = &self.predictions {
            let z = self.num_source_classes;
            for (row, chunk) in preds.chunks_exact(z).enumerate() {
                if let Some(v) = chunk.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(BundleError::NotStochastic {
                        row,
                        reason: format!("entry {v} is negative or non-finite"),
                    });
                }
                let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(BundleError::NotStochastic {
                        row,
                        reason: format!("row sums to {sum}"),
                    });
                }
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.num_classes {
                return Err(BundleError::Shape(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_source_classes(&self) -> usize {
        self.num_source_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn predictions(&self) -> Option<&[f32]> {
        self.predictions.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn is_class_subset(&self) -> bool {
        self.class_subset
    }

    pub fn provenance(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.provenance
    }

    /// Features widened to an `n x d` matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |i, j| self.features[i * self.d + j] as f64)
    }

    /// Features of the given rows, widened to `f64`.
    pub fn feature_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.d, |i, j| {
            self.features[rows[i] * self.d + j] as f64
        })
    }

    /// Predictions widened to an `n x Z` matrix.
    pub fn prediction_matrix(&self) -> Option<DMatrix<f64>> {
        let z = self.num_source_classes;
        self.predictions
            .as_ref()
            .map(|p| DMatrix::from_fn(self.n, z, |i, j| p[i * z + j] as f64))
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// A new bundle holding only the given rows (classes may become empty).
    pub fn subset(&self, rows: &[usize]) -> Result<Self, BundleError> {
        let d = self.d;
        let features = rows
            .iter()
            .flat_map(|&r| self.features[r * d..(r + 1) * d].iter().copied())
            .collect();
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        let predictions = self.predictions.as_ref().map(|p| {
            let z = self.num_source_classes;
            rows.iter()
                .flat_map(|&r| p[r * z..(r + 1) * z].iter().copied())
                .collect()
        });
        let out = Self {
            name: self.name.clone(),
            n: rows.len(),
            d,
            features,
            labels,
            num_classes: self.num_classes,
            predictions,
            num_source_classes: self.num_source_classes,
            class_names: self.class_names.clone(),
            class_subset: true,
            provenance: self.provenance.clone(),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            name: self.name.clone(),
            n: self.n,
            d: self.d,
            num_classes: self.num_classes,
            num_source_classes: self.num_source_classes,
            dtype: "f32".into(),
            byte_order: "little".into(),
            files: BundleFiles {
                features: FEATURES_FILE.into(),
                labels: LABELS_FILE.into(),
                predictions: self.predictions.as_ref().map(|_| PREDICTIONS_FILE.into()),
            },
            class_subset: self.class_subset,
            provenance: self.provenance.clone(),
        }
    }
}

fn read_exact_len(path: &Path, expected: u64, what: &str) -> Result<Vec<u8>, BundleError> {
    if !path.exists() {
        return Err(BundleError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() as u64 != expected {
        return Err(BundleError::SizeMismatch {
            file: what.to_string(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Loads and validates a bundle directory.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<EmbeddingBundle, BundleError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(BundleError::MissingFile(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| BundleError::Manifest(e.to_string()))?;
    manifest.check_tags()?;
    let (n, d, z) = (manifest.n as u64, manifest.d as u64, manifest.num_source_classes as u64);

    let features = decode_f32(&read_exact_len(
        &dir.join(&manifest.files.features),
        n * d * 4,
        &manifest.files.features,
    )?);
    let labels: Vec<u32> = read_exact_len(&dir.join(&manifest.files.labels), n * 4, &manifest.files.labels)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let predictions = match &manifest.files.predictions {
        Some(file) => Some(decode_f32(&read_exact_len(&dir.join(file), n * z * 4, file)?)),
        None => None,
    };
    let names_path = dir.join(CLASS_NAMES_FILE);
    let class_names = if names_path.exists() {
        let text = fs::read_to_string(&names_path).map_err(io_err(&names_path))?;
        Some(text.lines().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };

    let bundle = EmbeddingBundle {
        name: manifest.name,
        n: manifest.n,
        d: manifest.d,
        features,
        labels,
        num_classes: manifest.num_classes,
        predictions,
        num_source_classes: manifest.num_source_classes,
        class_names,
        class_subset: manifest.class_subset,
        provenance: manifest.provenance,
    };
    if bundle.d == 0 {
        return Err(BundleError::Shape("feature dimension must be positive".into()));
    }
    bundle.validate()?;
    Ok(bundle)
}

/// Writes a bundle directory (created if needed). Refuses invalid bundles.
pub fn write_bundle(bundle: &EmbeddingBundle, dir: impl AsRef<Path>) -> Result<(), BundleError> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |file: &str, bytes: &[u8]| -> Result<(), BundleError> {
        let path = dir.join(file);
        fs::write(&path, bytes).map_err(io_err(&path))
    };
    write(FEATURES_FILE, &encode_f32(&bundle.features))?;
    let labels: Vec<u8> = bundle.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    write(LABELS_FILE, &labels)?;
    if let Some(p) = &bundle.predictions {
        write(PREDICTIONS_FILE, &encode_f32(p))?;
    }
    if let Some(names) = &bundle.class_names {
        let mut text = names.join("\n");
        text.push('\n');
        write(CLASS_NAMES_FILE, text.as_bytes())?;
    }
    let manifest = serde_json::to_string_pretty(&bundle.manifest())
        .map_err(|e| BundleError::Manifest(e.to_string()))?;
    write(MANIFEST_FILE, manifest.as_bytes())
}

/// Disjoint reference / evaluation index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub reference: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Splits the bundle's samples into a reference part of `round(fraction * n)`
/// samples and an evaluation part holding the rest.
pub fn split_train_eval(
    bundle: &EmbeddingBundle,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Split, BundleError> {
    split_labels(bundle.labels(), bundle.num_classes(), fraction, seed, stratified)
}

/// Label-level split used by [`split_train_eval`].
///
/// Under stratification every class is shuffled separately and receives
/// `floor(fraction * n_c)` reference slots, topped up by largest remainder
/// until the global total is reached. A class with at least one sample always
/// keeps one in the reference part.
pub fn split_labels(
    labels: &[u32],
    num_classes: usize,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Split, BundleError> {
    let n = labels.len();
    if n < 2 {
        return Err(BundleError::TooFewSamples(n));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(BundleError::BadFraction(fraction));
    }
    let target = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut reference = Vec::with_capacity(target);
    let mut eval = Vec::with_capacity(n - target);
    if !stratified {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        reference.extend_from_slice(&idx[..target]);
        eval.extend_from_slice(&idx[target..]);
    } else {
        let mut members = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        for m in members.iter_mut() {
            m.shuffle(&mut rng);
        }
        let mut alloc: Vec<usize> = members
            .iter()
            .map(|m| {
                if m.is_empty() {
                    0
                } else {
                    ((fraction * m.len() as f64).floor() as usize).clamp(1, m.len())
                }
            })
            .collect();
        let remainder =
            |c: usize, alloc: &[usize]| fraction * members[c].len() as f64 - alloc[c] as f64;
        // Random class order breaks remainder ties.
        let mut order: Vec<usize> = (0..num_classes).collect();
        order.shuffle(&mut rng);
        let mut total: usize = alloc.iter().sum();
        while total < target {
            let pick = order
                .iter()
                .copied()
                .filter(|&c| alloc[c] < members[c].len())
                .max_by(|&a, &b| {
                    remainder(a, &alloc)
                        .total_cmp(&remainder(b, &alloc))
                        .then(b.cmp(&a))
                });
            match pick {
                Some(c) => {
                    alloc[c] += 1;
                    total += 1;
                }
                None => break,
            }
        }
        while total > target {
            let pick = order
                .iter()
                .copied()
                .filter(|&c| alloc[c] > 1)
                .min_by(|&a, &b| {
                    remainder(a, &alloc)
                        .total_cmp(&remainder(b, &alloc))
                        .then(a.cmp(&b))
                });
            match pick {
                Some(c) => {
                    alloc[c] -= 1;
                    total -= 1;
                }
                None => break,
            }
        }
        for (m, &k) in members.iter().zip(&alloc) {
            reference.extend_from_slice(&m[..k]);
            eval.extend_from_slice(&m[k..]);
        }
    }
    reference.sort_unstable();
    eval.sort_unstable();
    Ok(Split { reference, eval })
}

/// Seeded stratified partition into `folds` groups (each sorted).
pub fn stratified_folds(
    labels: &[u32],
    num_classes: usize,
    folds: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let mut out = vec![Vec::new(); folds];
    // Continue the round-robin across classes so fold sizes differ by at most one.
    let mut next = 0usize;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for f in out.iter_mut() {
        f.sort_unstable();
    }
    out
}
