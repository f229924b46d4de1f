//! Random forests for binary classification with post-hoc leaf calibration:
//! hierarchical shrinkage and Beta-posterior quantile smoothing.

pub mod betafun;
pub mod cart;
pub mod cli;
pub mod dataset;
pub mod forest;
pub mod harness;
pub mod metrics;
pub mod regularize;
pub mod seed;

pub use cart::{fit_tree, DecisionTree, MaxFeatures, TreeConfig, TreeNode};
pub use dataset::{load_bundled, load_csv, Dataset};
pub use forest::{fit_forest, fit_forest_rows, FittedForest, ForestConfig};
pub use harness::{
    experiment_cv, experiment_holdout, ExperimentConfig, ExperimentReport, GridSpec,
};
pub use regularize::{apply, RegularizerKind, RegularizerSpec};
