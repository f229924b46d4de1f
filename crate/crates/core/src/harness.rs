//! Benchmark protocols.
//!
//! * Cross-validation protocol: tune on the whole dataset by k-fold grid
//!   search, then report the k-fold mean of both metrics under the tuned
//!   hyperparameters.
//! * Hold-out protocol: split off a stratified test set, tune on the
//!   training part only, refit on all of it and score the test set.
//!
//! Both repeat `repetitions` times. Repetition `r` derives every seed it uses
//! from `derive_seed(master_seed, r)`, so any row can be reproduced alone and
//! rows do not depend on execution order. Seeds never depend on the method,
//! so different methods see identical folds and identical forests.

use crate::betafun::BetaParams;
use crate::cart::NodePath;
use crate::dataset::{stratified_kfold_labels, train_test_split_indices, DataError, Dataset};
use crate::forest::{fit_forest_rows, FittedForest, ForestConfig, ForestError};
use crate::metrics::{
    balanced_accuracy_from_scores, roc_auc_trapezoid, MetricError, ScoredPredictions,
};
use crate::regularize::{apply, path_value, RegularizeError, RegularizerKind, RegularizerSpec};
use crate::seed::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Shrinkage strengths searched for hierarchical shrinkage.
pub const DEFAULT_LAMBDAS: [f64; 9] = [0.001, 0.01, 0.1, 1.0, 10.0, 25.0, 50.0, 100.0, 200.0];
/// Values searched for each Beta prior parameter.
pub const DEFAULT_PRIOR_VALUES: [f64; 9] =
    [1500.0, 1000.0, 800.0, 500.0, 100.0, 50.0, 30.0, 10.0, 1.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Regularize(#[from] RegularizeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuningMetric {
    #[default]
    BalancedAccuracy,
    RocAuc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Cv,
    Holdout,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Protocol::Cv => "cv",
            Protocol::Holdout => "holdout",
        })
    }
}

/// Candidate calibrations for one method, searched in order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    method: RegularizerKind,
    points: Vec<RegularizerSpec>,
}

impl GridSpec {
    pub fn none() -> Self {
        GridSpec {
            method: RegularizerKind::None,
            points: vec![RegularizerSpec::None],
        }
    }

    pub fn hs(lambdas: &[f64]) -> Result<Self, HarnessError> {
        if lambdas.is_empty() {
            return Err(HarnessError::Config("empty lambda grid".into()));
        }
        let points = lambdas
            .iter()
            .map(|&l| RegularizerSpec::hs(l))
            .collect::<Result<_, _>>()?;
        Ok(GridSpec {
            method: RegularizerKind::Hs,
            points,
        })
    }

    pub fn beta_pairs(pairs: &[(f64, f64)]) -> Result<Self, HarnessError> {
        if pairs.is_empty() {
            return Err(HarnessError::Config("empty prior grid".into()));
        }
        let points = pairs
            .iter()
            .map(|&(a, b)| RegularizerSpec::beta(a, b))
            .collect::<Result<_, _>>()?;
        Ok(GridSpec {
            method: RegularizerKind::Beta,
            points,
        })
    }

    /// Every `(alpha, beta)` pair from `values × values`, alpha-major.
    pub fn beta_cartesian(values: &[f64]) -> Result<Self, HarnessError> {
        let pairs: Vec<(f64, f64)> = values
            .iter()
            .flat_map(|&a| values.iter().map(move |&b| (a, b)))
            .collect();
        Self::beta_pairs(&pairs)
    }

    /// `(v, v)` for each value.
    pub fn beta_tied(values: &[f64]) -> Result<Self, HarnessError> {
        let pairs: Vec<(f64, f64)> = values.iter().map(|&v| (v, v)).collect();
        Self::beta_pairs(&pairs)
    }

    /// Compiled-in grids: the nine shrinkage strengths for `hs`, and the
    /// nine prior values crossed (or tied) for `beta`.
    pub fn default_for(method: RegularizerKind, tied_prior: bool) -> Self {
        match method {
            RegularizerKind::None => Self::none(),
            RegularizerKind::Hs => Self::hs(&DEFAULT_LAMBDAS).expect("valid grid"),
            RegularizerKind::Beta if tied_prior => {
                Self::beta_tied(&DEFAULT_PRIOR_VALUES).expect("valid grid")
            }
            RegularizerKind::Beta => {
                Self::beta_cartesian(&DEFAULT_PRIOR_VALUES).expect("valid grid")
            }
        }
    }

    pub fn method(&self) -> RegularizerKind {
        self.method
    }

    pub fn points(&self) -> &[RegularizerSpec] {
        &self.points
    }
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(untagged)]
        enum Value {
            Lambda(f64),
            Prior(BetaParams),
        }
        #[derive(Serialize)]
        struct Doc {
            method: RegularizerKind,
            values: Vec<Value>,
        }
        let values = self
            .points
            .iter()
            .filter_map(|p| match *p {
                RegularizerSpec::None => None,
                RegularizerSpec::Hs { lambda } => Some(Value::Lambda(lambda)),
                RegularizerSpec::Beta { prior } => Some(Value::Prior(prior)),
            })
            .collect();
        Doc {
            method: self.method,
            values,
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub protocol: Protocol,
    pub method: RegularizerKind,
    pub grid: GridSpec,
    pub folds: usize,
    pub repetitions: usize,
    pub tuning_metric: TuningMetric,
    pub master_seed: u64,
    /// Used by the hold-out protocol only.
    pub test_fraction: f64,
    pub forest: ForestConfig,
}

impl ExperimentConfig {
    /// Defaults: 5 folds, 20 repetitions, balanced-accuracy tuning, test
    /// fraction 0.3, the default forest, and the compiled-in grid for `method`.
    pub fn new(dataset: impl Into<String>, protocol: Protocol, method: RegularizerKind) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            protocol,
            method,
            grid: GridSpec::default_for(method, false),
            folds: 5,
            repetitions: 20,
            tuning_metric: TuningMetric::BalancedAccuracy,
            master_seed: 0,
            test_fraction: 0.3,
            forest: ForestConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.folds < 2 {
            return Err(HarnessError::Config(format!(
                "folds = {}, need at least 2",
                self.folds
            )));
        }
        if self.repetitions < 1 {
            return Err(HarnessError::Config(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.grid.method() != self.method {
            return Err(HarnessError::Config(format!(
                "grid is for '{}' but the method is '{}'",
                self.grid.method(),
                self.method
            )));
        }
        self.forest.validate()?;
        Ok(())
    }
}

/// Hook for observing which dataset rows reach training and tuning.
pub trait FitObserver: Sync {
    /// Rows passed to a forest fit.
    fn on_fit(&self, _rows: &[usize]) {}
    /// Rows handed to a grid search.
    fn on_tune(&self, _rows: &[usize]) {}
    /// Rows whose predictions enter the reported metrics.
    fn on_test(&self, _rows: &[usize]) {}
}

pub struct NoObserver;

impl FitObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldScores {
    pub balanced_accuracy: f64,
    pub roc_auc: f64,
}

/// Both metrics of `forest` on the given rows.
pub fn evaluate(
    forest: &FittedForest,
    ds: &Dataset,
    rows: &[usize],
) -> Result<FoldScores, HarnessError> {
    let scores = forest.predict_rows(ds, rows)?;
    let labels = rows.iter().map(|&i| ds.label(i)).collect();
    let sp = ScoredPredictions::new(scores, labels)?;
    Ok(FoldScores {
        balanced_accuracy: balanced_accuracy_from_scores(&sp)?,
        roc_auc: roc_auc_trapezoid(&sp)?,
    })
}

fn fit_observed(
    ds: &Dataset,
    rows: &[usize],
    cfg: &ForestConfig,
    seed: u64,
    observer: &dyn FitObserver,
) -> Result<FittedForest, HarnessError> {
    observer.on_fit(rows);
    Ok(fit_forest_rows(ds, rows, &cfg.with_seed(seed))?)
}

/// Leaf paths reached by a fixed set of rows, for scoring many calibrations
/// of one uncalibrated forest without rewriting every leaf.
pub struct LeafTable<'a> {
    paths: Vec<NodePath<'a>>,
    /// `leaf[row * n_trees + tree]` indexes `paths`.
    leaf: Vec<usize>,
    n_trees: usize,
}

impl<'a> LeafTable<'a> {
    pub fn new(
        forest: &'a FittedForest,
        ds: &Dataset,
        rows: &[usize],
    ) -> Result<Self, HarnessError> {
        let n_trees = forest.trees().len();
        let mut index: HashMap<*const crate::cart::TreeNode, usize> = HashMap::new();
        let mut paths = Vec::new();
        let mut leaf = Vec::with_capacity(rows.len() * n_trees);
        for &r in rows {
            for tree in forest.trees() {
                let path = tree.find_path(ds.row(r)).map_err(ForestError::from)?;
                let id = *index.entry(path.leaf() as *const _).or_insert_with(|| {
                    paths.push(path);
                    paths.len() - 1
                });
                leaf.push(id);
            }
        }
        Ok(LeafTable {
            paths,
            leaf,
            n_trees,
        })
    }

    /// Forest probabilities under `spec`, equal to those of `apply(forest, spec)`.
    pub fn predict(&self, spec: RegularizerSpec) -> Result<Vec<f64>, HarnessError> {
        let values: Vec<f64> = match spec {
            RegularizerSpec::Beta { prior } => {
                // the leaf value depends only on the path's count sums
                let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
                self.paths
                    .iter()
                    .map(|p| {
                        let key = p
                            .nodes()
                            .iter()
                            .fold((0, 0), |(a, b), n| (a + n.n0(), b + n.n1()));
                        if let Some(&v) = memo.get(&key) {
                            return Ok(v);
                        }
                        let v = path_value(p, RegularizerSpec::Beta { prior })?;
                        memo.insert(key, v);
                        Ok(v)
                    })
                    .collect::<Result<_, RegularizeError>>()?
            }
            _ => self
                .paths
                .iter()
                .map(|p| path_value(p, spec))
                .collect::<Result<_, _>>()?,
        };
        Ok(self
            .leaf
            .chunks(self.n_trees)
            .map(|ids| ids.iter().map(|&i| values[i]).sum::<f64>() / self.n_trees as f64)
            .collect())
    }
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: RegularizerSpec,
    /// Cross-validated mean of the tuning metric per grid point; empty when
    /// the grid has a single point and nothing was evaluated.
    pub mean_scores: Vec<f64>,
}

pub struct GridSearch<'a> {
    pub grid: &'a GridSpec,
    pub folds: usize,
    pub metric: TuningMetric,
    pub forest: &'a ForestConfig,
    pub seed: u64,
}

/// k-fold grid search over `rows` of `ds`. One forest is fitted per fold
/// and every grid point calibrates a copy of it. The point with the highest
/// mean metric wins; ties go to the earliest point.
pub fn grid_search_cv(
    ds: &Dataset,
    rows: &[usize],
    search: &GridSearch<'_>,
    observer: &dyn FitObserver,
) -> Result<GridSearchResult, HarnessError> {
    observer.on_tune(rows);
    let points = search.grid.points();
    if points.len() == 1 {
        return Ok(GridSearchResult {
            best: points[0],
            mean_scores: Vec::new(),
        });
    }
    let labels: Vec<u8> = rows.iter().map(|&i| ds.label(i)).collect();
    let assignment = stratified_kfold_labels(&labels, search.folds, derive_seed(search.seed, 0))?;
    let per_fold: Vec<Vec<f64>> = (0..search.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = assignment
                .complement(f)
                .into_iter()
                .map(|p| rows[p])
                .collect();
            let held: Vec<usize> = assignment
                .held_out(f)
                .into_iter()
                .map(|p| rows[p])
                .collect();
            let forest = fit_observed(
                ds,
                &train,
                search.forest,
                derive_seed(search.seed, 1 + f as u64),
                observer,
            )?;
            let table = LeafTable::new(&forest, ds, &held)?;
            let labels: Vec<u8> = held.iter().map(|&i| ds.label(i)).collect();
            points
                .par_iter()
                .map(|&spec| {
                    let sp = ScoredPredictions::new(table.predict(spec)?, labels.clone())?;
                    Ok(match search.metric {
                        TuningMetric::BalancedAccuracy => balanced_accuracy_from_scores(&sp)?,
                        TuningMetric::RocAuc => roc_auc_trapezoid(&sp)?,
                    })
                })
                .collect::<Result<Vec<f64>, HarnessError>>()
        })
        .collect::<Result<_, _>>()?;
    let mean_scores: Vec<f64> = (0..points.len())
        .map(|p| per_fold.iter().map(|fold| fold[p]).sum::<f64>() / search.folds as f64)
        .collect();
    let mut best = 0;
    for (p, &score) in mean_scores.iter().enumerate() {
        if score > mean_scores[best] {
            best = p;
        }
    }
    Ok(GridSearchResult {
        best: points[best],
        mean_scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionRow {
    pub rep: usize,
    pub seed: u64,
    pub chosen: RegularizerSpec,
    pub balanced_accuracy: f64,
    pub roc_auc: f64,
}

/// Runs repetition `rep` of the configured protocol.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    rep: usize,
    observer: &dyn FitObserver,
) -> Result<RepetitionRow, HarnessError> {
    let seed = derive_seed(cfg.master_seed, rep as u64);
    let all: Vec<usize>;
    let (tune_rows, eval): (&[usize], Evaluation) = match cfg.protocol {
        Protocol::Cv => {
            all = (0..ds.n_samples()).collect();
            (&all, Evaluation::CrossValidated)
        }
        Protocol::Holdout => {
            let (train, test) =
                train_test_split_indices(ds.labels(), cfg.test_fraction, derive_seed(seed, 2))?;
            all = train;
            (&all, Evaluation::HeldOut(test))
        }
    };
    let search = GridSearch {
        grid: &cfg.grid,
        folds: cfg.folds,
        metric: cfg.tuning_metric,
        forest: &cfg.forest,
        seed: derive_seed(seed, 0),
    };
    let chosen = grid_search_cv(ds, tune_rows, &search, observer)?.best;

    let scores = match eval {
        Evaluation::CrossValidated => {
            let labels: Vec<u8> = tune_rows.iter().map(|&i| ds.label(i)).collect();
            let assignment = stratified_kfold_labels(&labels, cfg.folds, derive_seed(seed, 1))?;
            let folds: Vec<FoldScores> = (0..cfg.folds)
                .into_par_iter()
                .map(|f| {
                    let train: Vec<usize> = assignment
                        .complement(f)
                        .into_iter()
                        .map(|p| tune_rows[p])
                        .collect();
                    let held: Vec<usize> = assignment
                        .held_out(f)
                        .into_iter()
                        .map(|p| tune_rows[p])
                        .collect();
                    let forest = fit_observed(
                        ds,
                        &train,
                        &cfg.forest,
                        derive_seed(seed, 3 + f as u64),
                        observer,
                    )?;
                    observer.on_test(&held);
                    evaluate(&apply(&forest, chosen)?, ds, &held)
                })
                .collect::<Result<_, HarnessError>>()?;
            let k = folds.len() as f64;
            FoldScores {
                balanced_accuracy: folds.iter().map(|s| s.balanced_accuracy).sum::<f64>() / k,
                roc_auc: folds.iter().map(|s| s.roc_auc).sum::<f64>() / k,
            }
        }
        Evaluation::HeldOut(test) => {
            let forest = fit_observed(ds, tune_rows, &cfg.forest, derive_seed(seed, 3), observer)?;
            observer.on_test(&test);
            evaluate(&apply(&forest, chosen)?, ds, &test)?
        }
    };
    Ok(RepetitionRow {
        rep,
        seed,
        chosen,
        balanced_accuracy: scores.balanced_accuracy,
        roc_auc: scores.roc_auc,
    })
}

enum Evaluation {
    CrossValidated,
    HeldOut(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stats {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub balanced_accuracy: Stats,
    pub roc_auc: Stats,
}

impl Summary {
    pub fn from_rows(rows: &[RepetitionRow]) -> Summary {
        let ba: Vec<f64> = rows.iter().map(|r| r.balanced_accuracy).collect();
        let auc: Vec<f64> = rows.iter().map(|r| r.roc_auc).collect();
        Summary {
            balanced_accuracy: Stats::from_values(&ba),
            roc_auc: Stats::from_values(&auc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub notes: Vec<String>,
    pub rows: Vec<RepetitionRow>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// One line per repetition: `rep,seed,method,lambda,alpha,beta,balanced_accuracy,roc_auc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,protocol,method,rep,seed,lambda,alpha,beta,balanced_accuracy,roc_auc\n",
        );
        for r in &self.rows {
            let (lambda, alpha, beta) = match r.chosen {
                RegularizerSpec::None => (String::new(), String::new(), String::new()),
                RegularizerSpec::Hs { lambda } => {
                    (lambda.to_string(), String::new(), String::new())
                }
                RegularizerSpec::Beta { prior } => (
                    String::new(),
                    prior.alpha().to_string(),
                    prior.beta().to_string(),
                ),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.config.dataset,
                self.config.protocol,
                self.config.method,
                r.rep,
                r.seed,
                lambda,
                alpha,
                beta,
                r.balanced_accuracy,
                r.roc_auc
            ));
        }
        out
    }
}

fn report_notes(cfg: &ExperimentConfig) -> Vec<String> {
    let mut notes = vec![
        "forest hyperparameters are this tool's defaults unless overridden; see config.forest"
            .to_string(),
        "cross-validation folds are stratified by class".to_string(),
    ];
    match cfg.protocol {
        Protocol::Cv => notes.push(
            "hyperparameters are tuned on the full dataset before the reported cross-validation, so tuning information reaches the evaluation folds".to_string(),
        ),
        Protocol::Holdout => notes.push(format!(
            "test set is a stratified {} fraction drawn afresh each repetition; tuning sees training rows only",
            cfg.test_fraction
        )),
    }
    notes
}

/// Runs every repetition and assembles the report in repetition order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    observer: &dyn FitObserver,
) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let rows: Vec<RepetitionRow> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(cfg, ds, r, observer))
        .collect::<Result<_, _>>()?;
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        summary: Summary::from_rows(&rows),
        notes: report_notes(cfg),
        config: cfg.clone(),
        rows,
    })
}

/// Cross-validation protocol.
pub fn experiment_cv(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<ExperimentReport, HarnessError> {
    let cfg = ExperimentConfig {
        protocol: Protocol::Cv,
        ..cfg.clone()
    };
    run_experiment(&cfg, ds, &NoObserver)
}

/// Hold-out protocol.
pub fn experiment_holdout(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<ExperimentReport, HarnessError> {
    let cfg = ExperimentConfig {
        protocol: Protocol::Holdout,
        ..cfg.clone()
    };
    run_experiment(&cfg, ds, &NoObserver)
}
