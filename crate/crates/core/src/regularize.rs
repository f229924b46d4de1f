//! Post-hoc leaf calibration. Both methods rewrite `leaf_value` on a fitted
//! tree from the class counts along each root-to-leaf path; splits, counts
//! and mean responses are left as they are.
//!
//! * Hierarchical shrinkage damps every step of the root-to-leaf telescoping
//!   sum of mean responses by `1 + lambda / N(parent)`.
//! * Beta calibration adds the class counts of every node on the path
//!   (root included) to a Beta prior and evaluates the posterior quantile
//!   function at the posterior mean.

use crate::betafun::{beta_ppf, BetaFnError, BetaParams};
use crate::cart::{NodePath, TreeNode};
use crate::forest::FittedForest;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularizeError {
    #[error("lambda = {0} must be a finite non-negative number")]
    Lambda(f64),
    #[error("forest is already calibrated with {0}; calibrate a fresh fit instead")]
    AlreadyCalibrated(RegularizerSpec),
    #[error(transparent)]
    Beta(#[from] BetaFnError),
}

/// Which calibration to apply.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RegularizerSpec {
    #[default]
    None,
    Hs {
        lambda: f64,
    },
    Beta {
        prior: BetaParams,
    },
}

impl RegularizerSpec {
    pub fn kind(&self) -> RegularizerKind {
        match self {
            RegularizerSpec::None => RegularizerKind::None,
            RegularizerSpec::Hs { .. } => RegularizerKind::Hs,
            RegularizerSpec::Beta { .. } => RegularizerKind::Beta,
        }
    }

    pub fn hs(lambda: f64) -> Result<Self, RegularizeError> {
        check_lambda(lambda)?;
        Ok(RegularizerSpec::Hs { lambda })
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self, RegularizeError> {
        Ok(RegularizerSpec::Beta {
            prior: BetaParams::new(alpha, beta)?,
        })
    }
}

impl fmt::Display for RegularizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizerSpec::None => write!(f, "none"),
            RegularizerSpec::Hs { lambda } => write!(f, "hs(lambda={lambda})"),
            RegularizerSpec::Beta { prior } => {
                write!(f, "beta(alpha={}, beta={})", prior.alpha(), prior.beta())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Hs,
    Beta,
}

impl RegularizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Hs => "hs",
            RegularizerKind::Beta => "beta",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Wire form: `{"kind": "none"|"hs"|"beta", "lambda": .., "alpha": .., "beta": ..}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    kind: RegularizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

impl Serialize for RegularizerSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = match *self {
            RegularizerSpec::None => SpecDoc {
                kind: RegularizerKind::None,
                lambda: None,
                alpha: None,
                beta: None,
            },
            RegularizerSpec::Hs { lambda } => SpecDoc {
                kind: RegularizerKind::Hs,
                lambda: Some(lambda),
                alpha: None,
                beta: None,
            },
            RegularizerSpec::Beta { prior } => SpecDoc {
                kind: RegularizerKind::Beta,
                lambda: None,
                alpha: Some(prior.alpha()),
                beta: Some(prior.beta()),
            },
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RegularizerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = SpecDoc::deserialize(deserializer)?;
        match (doc.kind, doc.lambda, doc.alpha, doc.beta) {
            (RegularizerKind::None, None, None, None) => Ok(RegularizerSpec::None),
            (RegularizerKind::Hs, Some(lambda), None, None) => {
                RegularizerSpec::hs(lambda).map_err(D::Error::custom)
            }
            (RegularizerKind::Beta, None, Some(a), Some(b)) => {
                RegularizerSpec::beta(a, b).map_err(D::Error::custom)
            }
            (kind, ..) => Err(D::Error::custom(format!(
                "fields do not match kind '{kind}': hs takes lambda, beta takes alpha and beta"
            ))),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<(), RegularizeError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(RegularizeError::Lambda(lambda));
    }
    Ok(())
}

/// Hierarchical shrinkage: each leaf becomes
/// `E[t0] + sum_l (E[t_l] - E[t_{l-1}]) / (1 + lambda / N(t_{l-1}))`.
///
/// The sum is a convex combination of path means; it is clamped to `[0, 1]`
/// against rounding.
pub fn hs_calibrate(root: &mut TreeNode, lambda: f64) -> Result<(), RegularizeError> {
    check_lambda(lambda)?;
    fn walk(node: &mut TreeNode, acc: f64, lambda: f64) {
        let parent_mean = node.mean_response();
        let damp = 1.0 + lambda / node.n_samples() as f64;
        match node.split_mut() {
            None => node.set_leaf_value(acc.clamp(0.0, 1.0)),
            Some(s) => {
                let left = acc + (s.left.mean_response() - parent_mean) / damp;
                let right = acc + (s.right.mean_response() - parent_mean) / damp;
                walk(&mut s.left, left, lambda);
                walk(&mut s.right, right, lambda);
            }
        }
    }
    let start = root.mean_response();
    walk(root, start, lambda);
    Ok(())
}

/// Prior plus the class counts of every node on the path, root included:
/// alpha collects class-0 counts, beta class-1 counts.
pub fn beta_posterior_for_path(path: &NodePath<'_>, prior: BetaParams) -> BetaParams {
    let (n0, n1) = path
        .nodes()
        .iter()
        .fold((0usize, 0usize), |(a, b), n| (a + n.n0(), b + n.n1()));
    prior.add_counts(n0 as f64, n1 as f64)
}

/// Class-1 leaf probability for a posterior: `1 - PPF(mean | posterior)`.
///
/// The posterior's alpha side counts class 0, so its quantile lives on the
/// class-0 axis and is mirrored here.
pub fn leaf_value_from_posterior(posterior: BetaParams) -> Result<f64, BetaFnError> {
    let class0 = beta_ppf(posterior.mean(), posterior)?;
    Ok(1.0 - class0)
}

pub fn beta_calibrate(root: &mut TreeNode, prior: BetaParams) -> Result<(), RegularizeError> {
    fn walk(
        node: &mut TreeNode,
        n0: usize,
        n1: usize,
        prior: BetaParams,
    ) -> Result<(), RegularizeError> {
        let n0 = n0 + node.n0();
        let n1 = n1 + node.n1();
        match node.split_mut() {
            None => {
                let posterior = prior.add_counts(n0 as f64, n1 as f64);
                node.set_leaf_value(leaf_value_from_posterior(posterior)?);
            }
            Some(s) => {
                walk(&mut s.left, n0, n1, prior)?;
                walk(&mut s.right, n0, n1, prior)?;
            }
        }
        Ok(())
    }
    walk(root, 0, 0, prior)
}

/// The value `spec` gives the leaf ending `path`, computed from the path
/// alone; equal to that leaf's value after calibrating the whole tree.
pub fn path_value(path: &NodePath<'_>, spec: RegularizerSpec) -> Result<f64, RegularizeError> {
    match spec {
        RegularizerSpec::None => Ok(path.leaf().leaf_value()),
        RegularizerSpec::Hs { lambda } => {
            check_lambda(lambda)?;
            let nodes = path.nodes();
            let mut acc = nodes[0].mean_response();
            for w in nodes.windows(2) {
                let damp = 1.0 + lambda / w[0].n_samples() as f64;
                acc += (w[1].mean_response() - w[0].mean_response()) / damp;
            }
            Ok(acc.clamp(0.0, 1.0))
        }
        RegularizerSpec::Beta { prior } => Ok(leaf_value_from_posterior(beta_posterior_for_path(
            path, prior,
        ))?),
    }
}

fn calibrate_root(root: &mut TreeNode, spec: RegularizerSpec) -> Result<(), RegularizeError> {
    match spec {
        RegularizerSpec::None => Ok(()),
        RegularizerSpec::Hs { lambda } => hs_calibrate(root, lambda),
        RegularizerSpec::Beta { prior } => beta_calibrate(root, prior),
    }
}

/// Calibrated copy of an uncalibrated forest; the input is left untouched.
pub fn apply(
    forest: &FittedForest,
    spec: RegularizerSpec,
) -> Result<FittedForest, RegularizeError> {
    if forest.calibration() != RegularizerSpec::None {
        return Err(RegularizeError::AlreadyCalibrated(forest.calibration()));
    }
    let mut out = forest.clone();
    out.trees_mut()
        .par_iter_mut()
        .try_for_each(|t| calibrate_root(t.root_mut(), spec))?;
    out.set_calibration(spec);
    Ok(out)
}
