//! Bootstrap-aggregated forests of [`crate::cart`] trees with soft voting.

use crate::cart::{fit_tree, DecisionTree, MaxFeatures, TreeConfig, TreeError, TreeNode};
use crate::dataset::{class_counts, Dataset};
use crate::regularize::RegularizerSpec;
use crate::seed::{derive_seed, rng_from_seed};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForestError {
    #[error("training rows must contain both classes (found {n0} of class 0, {n1} of class 1)")]
    SingleClass { n0: usize, n1: usize },
    #[error("n_trees must be at least 1")]
    NoTrees,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Per-tree settings; `rng_seed` is replaced by a seed derived from `seed`.
    pub tree: TreeConfig,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree: TreeConfig {
                max_depth: None,
                min_samples_leaf: 1,
                max_features: MaxFeatures::Sqrt,
                rng_seed: 0,
            },
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::NoTrees);
        }
        self.tree.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedForest {
    trees: Vec<DecisionTree>,
    inbag_indices: Vec<Vec<usize>>,
    config: ForestConfig,
    calibration: RegularizerSpec,
    n_features: usize,
}

impl FittedForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub(crate) fn trees_mut(&mut self) -> &mut [DecisionTree] {
        &mut self.trees
    }

    /// Training-row indices (into the fitting dataset) each tree was grown on, sorted.
    pub fn inbag_indices(&self) -> &[Vec<usize>] {
        &self.inbag_indices
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn calibration(&self) -> RegularizerSpec {
        self.calibration
    }

    pub(crate) fn set_calibration(&mut self, spec: RegularizerSpec) {
        self.calibration = spec;
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Mean of the trees' class-1 probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ForestError> {
        self.check_dim(x)?;
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| t.leaf_unchecked(x).leaf_value())
            .sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// 1 iff the class-1 probability is at least 0.5.
    pub fn predict_label(&self, x: &[f64]) -> Result<u8, ForestError> {
        Ok(label_from_proba(self.predict_proba(x)?))
    }

    /// Probabilities for the given rows of `ds`.
    pub fn predict_rows(&self, ds: &Dataset, rows: &[usize]) -> Result<Vec<f64>, ForestError> {
        rows.iter()
            .map(|&i| self.predict_proba(ds.row(i)))
            .collect()
    }
}

pub fn label_from_proba(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// Fits a forest on all rows of `ds`.
pub fn fit_forest(ds: &Dataset, cfg: &ForestConfig) -> Result<FittedForest, ForestError> {
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    fit_forest_rows(ds, &rows, cfg)
}

/// Fits a forest on the rows `rows` of `ds`. Tree `t` draws its bootstrap
/// sample and feature subsets from `derive_seed(cfg.seed, t)` only, so the
/// result does not depend on thread scheduling.
pub fn fit_forest_rows(
    ds: &Dataset,
    rows: &[usize],
    cfg: &ForestConfig,
) -> Result<FittedForest, ForestError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(TreeError::EmptySample.into());
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= ds.n_samples()) {
        return Err(TreeError::IndexOutOfRange {
            index: bad,
            n: ds.n_samples(),
        }
        .into());
    }
    let labels: Vec<u8> = rows.iter().map(|&i| ds.label(i)).collect();
    let [n0, n1] = class_counts(&labels);
    if n0 == 0 || n1 == 0 {
        return Err(ForestError::SingleClass { n0, n1 });
    }

    let fitted: Vec<(DecisionTree, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(cfg.seed, t as u64);
            let mut inbag = if cfg.bootstrap {
                let mut rng = rng_from_seed(tree_seed);
                (0..rows.len())
                    .map(|_| rows[rng.random_range(0..rows.len())])
                    .collect()
            } else {
                rows.to_vec()
            };
            inbag.sort_unstable();
            let tree_cfg = TreeConfig {
                rng_seed: derive_seed(tree_seed, 1),
                ..cfg.tree
            };
            fit_tree(ds, &inbag, &tree_cfg).map(|tree| (tree, inbag))
        })
        .collect::<Result<_, _>>()?;
    let (trees, inbag_indices) = fitted.into_iter().unzip();
    Ok(FittedForest {
        trees,
        inbag_indices,
        config: *cfg,
        calibration: RegularizerSpec::None,
        n_features: ds.n_features(),
    })
}

#[derive(Serialize)]
struct ForestDocRef<'a> {
    schema_version: u32,
    config: &'a ForestConfig,
    calibration: RegularizerSpec,
    n_features: usize,
    trees: Vec<&'a TreeNode>,
    inbag_indices: &'a [Vec<usize>],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestDoc {
    schema_version: u32,
    config: ForestConfig,
    calibration: RegularizerSpec,
    n_features: usize,
    trees: Vec<TreeNode>,
    inbag_indices: Vec<Vec<usize>>,
}

impl Serialize for FittedForest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ForestDocRef {
            schema_version: MODEL_SCHEMA_VERSION,
            config: &self.config,
            calibration: self.calibration,
            n_features: self.n_features,
            trees: self.trees.iter().map(|t| t.root()).collect(),
            inbag_indices: &self.inbag_indices,
        }
        .serialize(serializer)
    }
}

impl TryFrom<ForestDoc> for FittedForest {
    type Error = ForestError;

    fn try_from(doc: ForestDoc) -> Result<Self, ForestError> {
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ForestError::Invalid(format!(
                "unsupported schema_version {} (expected {MODEL_SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        doc.config.validate()?;
        if doc.trees.len() != doc.config.n_trees || doc.inbag_indices.len() != doc.config.n_trees {
            return Err(ForestError::Invalid(format!(
                "config says {} trees but the document has {} trees and {} in-bag lists",
                doc.config.n_trees,
                doc.trees.len(),
                doc.inbag_indices.len()
            )));
        }
        let trees = doc
            .trees
            .into_iter()
            .map(|root| DecisionTree::new(root, doc.n_features))
            .collect::<Result<_, _>>()?;
        Ok(FittedForest {
            trees,
            inbag_indices: doc.inbag_indices,
            config: doc.config,
            calibration: doc.calibration,
            n_features: doc.n_features,
        })
    }
}

impl<'de> Deserialize<'de> for FittedForest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = ForestDoc::deserialize(deserializer)?;
        FittedForest::try_from(doc).map_err(serde::de::Error::custom)
    }
}

impl FittedForest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialization is infallible")
    }

    /// Parses a model document; deep trees are accepted without a nesting limit.
    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let forest =
            FittedForest::deserialize(&mut de).map_err(|e| ForestError::Invalid(e.to_string()))?;
        de.end().map_err(|e| ForestError::Invalid(e.to_string()))?;
        Ok(forest)
    }

    #[cfg(test)]
    pub(crate) fn from_trees(trees: Vec<DecisionTree>) -> Self {
        let n_features = trees[0].n_features();
        let config = ForestConfig {
            n_trees: trees.len(),
            bootstrap: false,
            ..ForestConfig::default()
        };
        FittedForest {
            inbag_indices: vec![Vec::new(); trees.len()],
            trees,
            config,
            calibration: RegularizerSpec::None,
            n_features,
        }
    }
}
