//! Tabular binary-classification datasets: CSV ingestion, the benchmark
//! registry, and deterministic stratified folds and splits.

use crate::seed::rng_from_seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable overriding the bundled dataset directory.
pub const DATA_DIR_ENV: &str = "TREESMOOTH_DATA_DIR";

const MISSING_MARKERS: [&str; 5] = ["", "?", "NA", "NaN", "nan"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing value at line {line}, column '{column}'")]
    MissingValue { line: u64, column: String },
    #[error("unsupported dataset: {0}")]
    Unsupported(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("cannot stratify into {k} folds: class {class} has only {count} samples")]
    InfeasibleStratification { class: u8, count: usize, k: usize },
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("unknown dataset '{name}'; known datasets: {}", known.join(", "))]
    UnknownDataset { name: String, known: Vec<String> },
    #[error("bad manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Feature matrix (row-major) with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    feature_names: Vec<String>,
    n_features: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let n_features = feature_names.len();
        if rows.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(DataError::Invalid(format!("label {bad} is not 0 or 1")));
        }
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_features {
                return Err(DataError::Invalid(format!(
                    "row {i} has {} values, expected {n_features}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!(
                    "row {i} has a non-finite value"
                )));
            }
            features.extend(row);
        }
        Ok(Self {
            name: name.into(),
            feature_names,
            n_features,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_samples()).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// `[class-0 count, class-1 count]`.
    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.labels)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            n_features: self.n_features,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub(crate) fn class_counts(labels: &[u8]) -> [usize; 2] {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    [labels.len() - ones, ones]
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(e: csv::Error, path: &Path) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => DataError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64, DataError> {
    if MISSING_MARKERS.contains(&cell) {
        return Err(DataError::MissingValue {
            line,
            column: column.to_string(),
        });
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Parse {
            line,
            message: format!("column '{column}': '{cell}' is not a finite number"),
        }),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Maps two distinct raw label strings to 0/1 by sorted order (numeric when
/// both parse as numbers, lexicographic otherwise).
fn label_mapping(raw: &[String]) -> Result<[String; 2], DataError> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        return Err(DataError::Unsupported(format!(
            "label column must hold exactly 2 distinct values, found {}: {:?}",
            distinct.len(),
            distinct.iter().take(10).collect::<Vec<_>>()
        )));
    }
    let mut values: Vec<&str> = distinct.into_iter().collect();
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        if nums[1] < nums[0] {
            values.swap(0, 1);
        }
    }
    Ok([values[0].to_string(), values[1].to_string()])
}

/// Reads a CSV with a header row whose final column is the binary label.
/// The dataset is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e, path))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(DataError::Parse {
            line: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }
    let n_features = header.len() - 1;
    let feature_names = header[..n_features].to_vec();

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .take(n_features)
            .zip(&feature_names)
            .map(|(cell, col)| parse_cell(cell, line, col))
            .collect::<Result<Vec<f64>, _>>()?;
        let label = &record[n_features];
        if MISSING_MARKERS.contains(&label) {
            return Err(DataError::MissingValue {
                line,
                column: header[n_features].clone(),
            });
        }
        rows.push(row);
        raw_labels.push(label.to_string());
    }
    let mapping = label_mapping(&raw_labels)?;
    let labels = raw_labels
        .iter()
        .map(|l| u8::from(*l == mapping[1]))
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, feature_names, rows, labels)
}

/// Reads feature rows from a CSV with a header, without a label column.
pub fn load_feature_rows(
    path: impl AsRef<Path>,
) -> Result<(Vec<String>, Vec<Vec<f64>>), DataError> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e, path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        rows.push(
            record
                .iter()
                .zip(&header)
                .map(|(cell, col)| parse_cell(cell, line, col))
                .collect::<Result<Vec<f64>, _>>()?,
        );
    }
    Ok((header, rows))
}

/// Writes `ds` in the format [`load_csv`] reads; the label column is `target`.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(e, path))?;
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push("target");
    wtr.write_record(&header).map_err(|e| csv_err(e, path))?;
    for (row, label) in ds.rows().zip(ds.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        wtr.write_record(&rec).map_err(|e| csv_err(e, path))?;
    }
    wtr.flush().map_err(io_err(path))
}

/// Published dimensions of a benchmark dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetRegistryEntry {
    pub name: &'static str,
    pub expected_samples: usize,
    pub expected_features: usize,
    pub expected_class0: usize,
    pub expected_class1: usize,
}

impl DatasetRegistryEntry {
    /// Whether the class counts add up to the sample count.
    pub fn is_consistent(&self) -> bool {
        self.expected_class0 + self.expected_class1 == self.expected_samples
    }
}

/// The four benchmark datasets, as published. The breast-cancer row is not
/// self-consistent (196 + 81 = 277, not 286); the bundled copy has 277 rows.
pub const REGISTRY: [DatasetRegistryEntry; 4] = [
    DatasetRegistryEntry {
        name: "breast-cancer",
        expected_samples: 286,
        expected_features: 9,
        expected_class0: 196,
        expected_class1: 81,
    },
    DatasetRegistryEntry {
        name: "haberman",
        expected_samples: 306,
        expected_features: 3,
        expected_class0: 81,
        expected_class1: 225,
    },
    DatasetRegistryEntry {
        name: "heart",
        expected_samples: 270,
        expected_features: 15,
        expected_class0: 150,
        expected_class1: 120,
    },
    DatasetRegistryEntry {
        name: "diabetes",
        expected_samples: 768,
        expected_features: 8,
        expected_class0: 500,
        expected_class1: 268,
    },
];

/// Canonical registry name for `name`, accepting common spellings.
pub fn canonical_name(name: &str) -> String {
    let n = name.trim().to_ascii_lowercase().replace(['_', ' '], "-");
    match n.as_str() {
        "habermann" => "haberman".to_string(),
        "breast" | "breastcancer" => "breast-cancer".to_string(),
        "pima" | "pima-diabetes" => "diabetes".to_string(),
        _ => n,
    }
}

pub fn registry_entry(name: &str) -> Option<&'static DatasetRegistryEntry> {
    let n = canonical_name(name);
    REGISTRY.iter().find(|e| e.name == n)
}

pub fn registry_names() -> Vec<String> {
    REGISTRY.iter().map(|e| e.name.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    Samples {
        expected: usize,
        found: usize,
    },
    Features {
        expected: usize,
        found: usize,
    },
    ClassCounts {
        expected: [usize; 2],
        found: [usize; 2],
    },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Samples { expected, found } => {
                write!(f, "sample count {found}, expected {expected}")
            }
            Mismatch::Features { expected, found } => {
                write!(f, "feature count {found}, expected {expected}")
            }
            Mismatch::ClassCounts { expected, found } => write!(
                f,
                "class counts {}/{}, expected {}/{}",
                found[0], found[1], expected[0], expected[1]
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub samples: usize,
    pub features: usize,
    pub class_counts: [usize; 2],
    pub mismatches: Vec<Mismatch>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares a dataset's dimensions to a registry entry. Class counts are
/// compared as an unordered pair.
pub fn validate_against_registry(ds: &Dataset, entry: &DatasetRegistryEntry) -> ValidationReport {
    let samples = ds.n_samples();
    let features = ds.n_features();
    let class_counts = ds.class_counts();
    let mut mismatches = Vec::new();
    if samples != entry.expected_samples {
        mismatches.push(Mismatch::Samples {
            expected: entry.expected_samples,
            found: samples,
        });
    }
    if features != entry.expected_features {
        mismatches.push(Mismatch::Features {
            expected: entry.expected_features,
            found: features,
        });
    }
    let mut want = [entry.expected_class0, entry.expected_class1];
    let mut got = class_counts;
    want.sort_unstable();
    got.sort_unstable();
    if want != got {
        mismatches.push(Mismatch::ClassCounts {
            expected: [entry.expected_class0, entry.expected_class1],
            found: class_counts,
        });
    }
    ValidationReport {
        samples,
        features,
        class_counts,
        mismatches,
    }
}

/// One record of `data/manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub samples: usize,
    pub features: usize,
    pub class0: usize,
    pub class1: usize,
    pub source: String,
}

/// Directory holding the bundled datasets.
pub fn data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

pub fn load_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Manifest {
        path,
        message: e.to_string(),
    })
}

/// Loads a bundled dataset by registry name from [`data_dir`].
pub fn load_bundled(name: &str) -> Result<Dataset, DataError> {
    let entry = registry_entry(name).ok_or_else(|| DataError::UnknownDataset {
        name: name.to_string(),
        known: registry_names(),
    })?;
    let dir = data_dir();
    let file = load_manifest(&dir)?
        .into_iter()
        .find(|m| m.name == entry.name)
        .map(|m| m.file)
        .unwrap_or_else(|| format!("{}.csv", entry.name));
    Ok(load_csv(dir.join(file))?.with_name(entry.name))
}

/// Fold id in `0..k` for every sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_ids(&self) -> &[usize] {
        &self.folds
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.folds[i]
    }

    /// Positions assigned to `fold`, ascending.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    /// Positions not assigned to `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] != fold)
            .collect()
    }
}

/// Stratified k-fold assignment over a label vector.
///
/// Each class is shuffled, the classes are concatenated, and positions are
/// dealt round-robin into folds. Fold sizes then differ by at most one, and
/// so do the per-fold counts of each class.
pub fn stratified_kfold_labels(
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::Invalid(format!(
            "k = {k}, need at least 2 folds"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(DataError::InfeasibleStratification {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut folds = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(FoldAssignment { k, folds })
}

pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    stratified_kfold_labels(ds.labels(), k, seed)
}

/// Stratified train/test partition of positions `0..labels.len()`; each class
/// contributes `round(test_fraction * class_size)` samples to the test part.
/// Both parts are returned in ascending order.
pub fn train_test_split_indices(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InfeasibleSplit(format!(
            "test fraction {test_fraction} is not in (0, 1)"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        if n_test == 0 || n_test >= members.len() {
            return Err(DataError::InfeasibleSplit(format!(
                "class {class} has {} samples; test fraction {test_fraction} leaves one part without it",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn train_test_split(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let (train, test) = train_test_split_indices(ds.labels(), test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}
