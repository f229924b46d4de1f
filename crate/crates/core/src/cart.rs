//! Binary classification trees (CART, Gini impurity) that keep per-node class
//! counts.
//!
//! Every node records how many class-0 and class-1 training samples reached
//! it. Those counts are what the leaf calibrators in [`crate::regularize`]
//! consume; the tree structure itself is never changed after fitting.

use crate::dataset::Dataset;
use crate::seed::rng_from_seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("cannot fit a tree on an empty sample")]
    EmptySample,
    #[error("sample index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("feature vector has {found} values, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Number of candidate features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    /// `ceil(sqrt(d))`
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        let m = match *self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub rng_seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            rng_seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_samples_leaf < 1 {
            return Err(TreeError::Config(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(TreeError::Config("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

/// Axis-aligned split: samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: TreeNode,
    pub right: TreeNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    n0: usize,
    n1: usize,
    mean_response: f64,
    leaf_value: f64,
    split: Option<Box<Split>>,
}

impl TreeNode {
    pub fn leaf(n0: usize, n1: usize) -> Result<Self, TreeError> {
        if n0 + n1 == 0 {
            return Err(TreeError::Invalid("node with no samples".into()));
        }
        let mean = n1 as f64 / (n0 + n1) as f64;
        Ok(Self {
            n0,
            n1,
            mean_response: mean,
            leaf_value: mean,
            split: None,
        })
    }

    /// Internal node whose counts are the sums of its children's.
    pub fn internal(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        let n0 = left.n0 + right.n0;
        let n1 = left.n1 + right.n1;
        let mean = n1 as f64 / (n0 + n1) as f64;
        Self {
            n0,
            n1,
            mean_response: mean,
            leaf_value: mean,
            split: Some(Box::new(Split {
                feature,
                threshold,
                left,
                right,
            })),
        }
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n_samples(&self) -> usize {
        self.n0 + self.n1
    }

    pub fn mean_response(&self) -> f64 {
        self.mean_response
    }

    pub fn leaf_value(&self) -> f64 {
        self.leaf_value
    }

    pub(crate) fn set_leaf_value(&mut self, v: f64) {
        self.leaf_value = v;
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_deref()
    }

    pub(crate) fn split_mut(&mut self) -> Option<&mut Split> {
        self.split.as_deref_mut()
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn depth(&self) -> usize {
        match self.split() {
            None => 0,
            Some(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self.split() {
            None => 1,
            Some(s) => s.left.n_leaves() + s.right.n_leaves(),
        }
    }

    /// Pre-order traversal.
    pub fn for_each_node<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let Some(s) = self.split() {
            s.left.for_each_node(f);
            s.right.for_each_node(f);
        }
    }

    /// (feature, threshold) of the split, if any.
    pub fn rule(&self) -> Option<(usize, f64)> {
        self.split().map(|s| (s.feature, s.threshold))
    }

    /// Copy with every leaf value reset to the node's mean response.
    pub fn uncalibrated(&self) -> TreeNode {
        let mut out = self.clone();
        fn reset(n: &mut TreeNode) {
            n.leaf_value = n.mean_response;
            if let Some(s) = n.split_mut() {
                reset(&mut s.left);
                reset(&mut s.right);
            }
        }
        reset(&mut out);
        out
    }
}

/// Root-to-leaf sequence of nodes visited by a query point.
#[derive(Debug, Clone)]
pub struct NodePath<'a> {
    nodes: Vec<&'a TreeNode>,
}

impl<'a> NodePath<'a> {
    pub fn nodes(&self) -> &[&'a TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &'a TreeNode {
        self.nodes[0]
    }

    pub fn leaf(&self) -> &'a TreeNode {
        self.nodes[self.nodes.len() - 1]
    }

    /// Number of edges, `L`.
    pub fn depth(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// A fitted tree together with the feature count it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: TreeNode,
    n_features: usize,
}

impl DecisionTree {
    pub fn new(root: TreeNode, n_features: usize) -> Result<Self, TreeError> {
        let mut bad = None;
        root.for_each_node(&mut |n| {
            if let Some((f, _)) = n.rule() {
                if f >= n_features {
                    bad = Some(f);
                }
            }
        });
        if let Some(f) = bad {
            return Err(TreeError::Invalid(format!(
                "split on feature {f} but the tree has {n_features} features"
            )));
        }
        Ok(Self { root, n_features })
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub(crate) fn root_mut(&mut self) -> &mut TreeNode {
        &mut self.root
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn find_path(&self, x: &[f64]) -> Result<NodePath<'_>, TreeError> {
        self.check_dim(x)?;
        let mut nodes = vec![&self.root];
        let mut node = &self.root;
        while let Some(s) = node.split() {
            node = if x[s.feature] <= s.threshold {
                &s.left
            } else {
                &s.right
            };
            nodes.push(node);
        }
        Ok(NodePath { nodes })
    }

    /// Leaf reached by `x`; the caller guarantees the dimension.
    pub(crate) fn leaf_unchecked(&self, x: &[f64]) -> &TreeNode {
        let mut node = &self.root;
        while let Some(s) = node.split() {
            node = if x[s.feature] <= s.threshold {
                &s.left
            } else {
                &s.right
            };
        }
        node
    }

    /// Class-1 probability: the `leaf_value` of the leaf `x` reaches.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, TreeError> {
        self.check_dim(x)?;
        Ok(self.leaf_unchecked(x).leaf_value)
    }
}

/// Split score to maximise: `(l0² + l1²)/nl + (r0² + r1²)/nr`, kept as an
/// exact fraction so that equal-impurity candidates compare equal.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(l0: usize, l1: usize, r0: usize, r1: usize) -> Self {
        let (l0, l1, r0, r1) = (l0 as u128, l1 as u128, r0 as u128, r1 as u128);
        let (nl, nr) = (l0 + l1, r0 + r1);
        Score {
            num: (l0 * l0 + l1 * l1) * nr + (r0 * r0 + r1 * r1) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: Score,
}

impl Candidate {
    /// Higher score wins; ties go to the lower feature index, then the lower threshold.
    fn better_than(&self, other: &Candidate) -> bool {
        match self.score.cmp(&other.score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.feature, self.threshold) < (other.feature, other.threshold),
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = a / 2.0 + b / 2.0;
    if t >= a && t < b {
        t
    } else {
        a
    }
}

struct Builder<'a> {
    ds: &'a Dataset,
    cfg: &'a TreeConfig,
    rng: rand_chacha::ChaCha8Rng,
    mtry: usize,
    features: Vec<usize>,
    scratch: Vec<(f64, u8)>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let n1 = idx.iter().filter(|&&i| self.ds.label(i) == 1).count();
        let n0 = idx.len() - n1;
        let leaf = TreeNode::leaf(n0, n1).expect("non-empty node");
        let depth_reached = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if n0 == 0 || n1 == 0 || depth_reached || idx.len() < 2 * self.cfg.min_samples_leaf {
            return leaf;
        }
        let Some(best) = self.best_split(idx) else {
            return leaf;
        };
        let mut n_left = 0;
        for pos in 0..idx.len() {
            if self.ds.row(idx[pos])[best.feature] <= best.threshold {
                idx.swap(pos, n_left);
                n_left += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(n_left);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        TreeNode::internal(best.feature, best.threshold, left, right)
    }

    /// Examines `mtry` features drawn without replacement; if none of them
    /// admits a valid split, keeps drawing until one does or all are used.
    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let d = self.features.len();
        if self.mtry < d {
            self.features.shuffle(&mut self.rng);
        }
        let mut best: Option<Candidate> = None;
        for k in 0..d {
            if k >= self.mtry && best.is_some() {
                break;
            }
            let f = self.features[k];
            if let Some(c) = self.best_on_feature(idx, f) {
                if best.as_ref().is_none_or(|b| c.better_than(b)) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_on_feature(&mut self, idx: &[usize], feature: usize) -> Option<Candidate> {
        let msl = self.cfg.min_samples_leaf;
        self.scratch.clear();
        self.scratch.extend(
            idx.iter()
                .map(|&i| (self.ds.row(i)[feature], self.ds.label(i))),
        );
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = self.scratch.len();
        let total1 = self.scratch.iter().filter(|p| p.1 == 1).count();
        let total0 = n - total1;
        let (mut l0, mut l1) = (0usize, 0usize);
        let mut best: Option<Candidate> = None;
        for pos in 1..n {
            if self.scratch[pos - 1].1 == 1 {
                l1 += 1;
            } else {
                l0 += 1;
            }
            let (a, b) = (self.scratch[pos - 1].0, self.scratch[pos].0);
            if a == b || pos < msl || n - pos < msl {
                continue;
            }
            let score = Score::new(l0, l1, total0 - l0, total1 - l1);
            if best
                .as_ref()
                .is_none_or(|c| score.cmp(&c.score) == Ordering::Greater)
            {
                best = Some(Candidate {
                    feature,
                    threshold: midpoint(a, b),
                    score,
                });
            }
        }
        best
    }
}

/// Grows a tree on the rows `sample_indices` of `ds` (repeats allowed, as in
/// a bootstrap sample).
///
/// Nodes split greedily on Gini impurity until they are pure, reach
/// `max_depth`, or no feature separates their samples. Zero-gain splits are
/// accepted, so an impure node with a non-constant feature always splits.
pub fn fit_tree(
    ds: &Dataset,
    sample_indices: &[usize],
    cfg: &TreeConfig,
) -> Result<DecisionTree, TreeError> {
    cfg.validate()?;
    if sample_indices.is_empty() {
        return Err(TreeError::EmptySample);
    }
    let n = ds.n_samples();
    if let Some(&bad) = sample_indices.iter().find(|&&i| i >= n) {
        return Err(TreeError::IndexOutOfRange { index: bad, n });
    }
    let d = ds.n_features();
    let mut builder = Builder {
        ds,
        cfg,
        rng: rng_from_seed(cfg.rng_seed),
        mtry: cfg.max_features.resolve(d),
        features: (0..d).collect(),
        scratch: Vec::with_capacity(sample_indices.len()),
    };
    let mut idx = sample_indices.to_vec();
    let root = builder.build(&mut idx, 0);
    DecisionTree::new(root, d)
}

// JSON document form: {feature, threshold, n0, n1, mean, leaf_value, left, right}.

#[derive(Serialize)]
struct NodeDocRef<'a> {
    feature: Option<usize>,
    threshold: Option<f64>,
    n0: usize,
    n1: usize,
    mean: f64,
    leaf_value: f64,
    left: Option<&'a TreeNode>,
    right: Option<&'a TreeNode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    feature: Option<usize>,
    threshold: Option<f64>,
    n0: usize,
    n1: usize,
    mean: f64,
    leaf_value: f64,
    left: Option<Box<TreeNode>>,
    right: Option<Box<TreeNode>>,
}

impl Serialize for TreeNode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let split = self.split();
        NodeDocRef {
            feature: split.map(|s| s.feature),
            threshold: split.map(|s| s.threshold),
            n0: self.n0,
            n1: self.n1,
            mean: self.mean_response,
            leaf_value: self.leaf_value,
            left: split.map(|s| &s.left),
            right: split.map(|s| &s.right),
        }
        .serialize(serializer)
    }
}

impl TryFrom<NodeDoc> for TreeNode {
    type Error = TreeError;

    fn try_from(doc: NodeDoc) -> Result<Self, TreeError> {
        let mut node = match (doc.feature, doc.threshold, doc.left, doc.right) {
            (None, None, None, None) => TreeNode::leaf(doc.n0, doc.n1)?,
            (Some(feature), Some(threshold), Some(left), Some(right)) => {
                if !threshold.is_finite() {
                    return Err(TreeError::Invalid("non-finite threshold".into()));
                }
                let node = TreeNode::internal(feature, threshold, *left, *right);
                if node.n0 != doc.n0 || node.n1 != doc.n1 {
                    return Err(TreeError::Invalid(format!(
                        "node counts ({}, {}) differ from the sum of its children ({}, {})",
                        doc.n0, doc.n1, node.n0, node.n1
                    )));
                }
                node
            }
            _ => {
                return Err(TreeError::Invalid(
                    "feature, threshold, left and right must be all present or all null".into(),
                ))
            }
        };
        if (node.mean_response - doc.mean).abs() > 1e-12 {
            return Err(TreeError::Invalid(format!(
                "mean {} does not match counts ({}, {})",
                doc.mean, doc.n0, doc.n1
            )));
        }
        if !(0.0..=1.0).contains(&doc.leaf_value) {
            return Err(TreeError::Invalid(format!(
                "leaf_value {} outside [0, 1]",
                doc.leaf_value
            )));
        }
        node.leaf_value = doc.leaf_value;
        Ok(node)
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = NodeDoc::deserialize(deserializer)?;
        TreeNode::try_from(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize)]
struct TreeDocRef<'a> {
    n_features: usize,
    root: &'a TreeNode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    n_features: usize,
    root: TreeNode,
}

impl Serialize for DecisionTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TreeDocRef {
            n_features: self.n_features,
            root: &self.root,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DecisionTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = TreeDoc::deserialize(deserializer)?;
        DecisionTree::new(doc.root, doc.n_features).map_err(serde::de::Error::custom)
    }
}
