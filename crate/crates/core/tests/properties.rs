mod common;

use common::{leaf_paths, leaf_values, random_dataset, random_tree};
use proptest::prelude::*;
use treesmooth::betafun::{beta_cdf, beta_ppf, BetaParams};
use treesmooth::cart::{DecisionTree, TreeNode};
use treesmooth::dataset::{load_csv, stratified_kfold_labels, write_csv};
use treesmooth::forest::{fit_forest, ForestConfig};
use treesmooth::metrics::{roc_auc_pairs, roc_auc_trapezoid, ScoredPredictions};
use treesmooth::regularize::{beta_calibrate, hs_calibrate};

fn labels_strategy() -> impl Strategy<Value = (Vec<u8>, usize)> {
    (2usize..7).prop_flat_map(|k| {
        (k..60usize, k..60usize, Just(k)).prop_flat_map(|(n0, n1, k)| {
            let mut base = vec![0u8; n0];
            base.extend(std::iter::repeat_n(1u8, n1));
            (Just(base).prop_shuffle(), Just(k))
        })
    })
}

type NodeSignature = (Option<(usize, u64)>, usize, usize);

fn node_signature(root: &TreeNode) -> Vec<NodeSignature> {
    let mut out = Vec::new();
    root.for_each_node(&mut |n| {
        out.push((n.rule().map(|(f, t)| (f, t.to_bits())), n.n0(), n.n1()))
    });
    out
}

/// Copy of `root` in which the node at `depth` along `x`'s path becomes a leaf.
fn truncate_along(root: &TreeNode, x: &[f64], depth: usize) -> TreeNode {
    match root.split() {
        Some(s) if depth > 0 => {
            let (left, right) = if x[s.feature] <= s.threshold {
                (
                    truncate_along(&s.left, x, depth - 1),
                    s.right.uncalibrated(),
                )
            } else {
                (
                    s.left.uncalibrated(),
                    truncate_along(&s.right, x, depth - 1),
                )
            };
            TreeNode::internal(s.feature, s.threshold, left, right)
        }
        _ => TreeNode::leaf(root.n0(), root.n1()).unwrap(),
    }
}

fn hs_value(root: &TreeNode, n_features: usize, x: &[f64], lambda: f64) -> f64 {
    let mut r = root.uncalibrated();
    hs_calibrate(&mut r, lambda).unwrap();
    DecisionTree::new(r, n_features)
        .unwrap()
        .predict_proba(x)
        .unwrap()
}

proptest! {
    #[test]
    fn folds_are_balanced_and_stratified((labels, k) in labels_strategy(), seed in any::<u64>()) {
        let folds = stratified_kfold_labels(&labels, k, seed).unwrap();
        let sizes: Vec<usize> = (0..k).map(|f| folds.held_out(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..2u8 {
            let total = labels.iter().filter(|&&l| l == class).count();
            for f in 0..k {
                let c = folds.held_out(f).iter().filter(|&&i| labels[i] == class).count();
                prop_assert!(c == total / k || c == total.div_ceil(k));
            }
        }
        let mut all: Vec<usize> = (0..k).flat_map(|f| folds.held_out(f)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n in 2usize..40, d in 1usize..6, scale in 1e-3f64..1e6) {
        let base = random_dataset(seed, n, d, 1000);
        let rows: Vec<Vec<f64>> = base.rows().map(|r| r.iter().map(|v| (v - 500.0) / scale).collect()).collect();
        let ds = treesmooth::Dataset::new("rt", base.feature_names().to_vec(), rows, base.labels().to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv(&ds, &path).unwrap();
        prop_assert_eq!(load_csv(&path).unwrap(), ds);
    }

    #[test]
    fn internal_counts_are_sum_of_children(seed in any::<u64>()) {
        let (_, tree) = random_tree(seed);
        tree.root().for_each_node(&mut |n| {
            if let Some(s) = n.split() {
                assert_eq!(n.n0(), s.left.n0() + s.right.n0());
                assert_eq!(n.n1(), s.left.n1() + s.right.n1());
            }
        });
    }

    #[test]
    fn telescoping_sum_recovers_leaf_mean(seed in any::<u64>(), q in prop::collection::vec(0.0f64..12.0, 4)) {
        let (_, tree) = random_tree(seed);
        let x = &q[..tree.n_features()];
        let path = tree.find_path(x).unwrap();
        let nodes = path.nodes();
        let mut acc = nodes[0].mean_response();
        for w in nodes.windows(2) {
            acc += w[1].mean_response() - w[0].mean_response();
        }
        prop_assert!((acc - path.leaf().mean_response()).abs() <= 1e-12);
        prop_assert_eq!(tree.predict_proba(x).unwrap(), path.leaf().mean_response());
    }

    #[test]
    fn tree_fit_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(random_tree(seed).1, random_tree(seed).1);
    }

    #[test]
    fn unlimited_tree_memorizes_distinct_rows(seed in any::<u64>(), n in 2usize..80, d in 1usize..4) {
        let mut ds = random_dataset(seed, n, d, 1_000_000);
        let mut seen = std::collections::HashSet::new();
        let keep: Vec<usize> = (0..n)
            .filter(|&i| seen.insert(ds.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect();
        ds = ds.subset(&keep);
        prop_assume!(ds.class_counts().iter().all(|&c| c > 0));
        let cfg = treesmooth::TreeConfig::default();
        let all: Vec<usize> = (0..ds.n_samples()).collect();
        let tree = treesmooth::fit_tree(&ds, &all, &cfg).unwrap();
        for i in 0..ds.n_samples() {
            let p = tree.predict_proba(ds.row(i)).unwrap();
            prop_assert_eq!(p, f64::from(ds.label(i)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forest_within_tree_range_and_order_free(seed in any::<u64>(), q in prop::collection::vec(0.0f64..8.0, 3)) {
        let ds = random_dataset(seed, 60, 3, 8);
        let cfg = ForestConfig { n_trees: 9, ..ForestConfig::default() }.with_seed(seed);
        let forest = fit_forest(&ds, &cfg).unwrap();
        let per_tree: Vec<f64> = forest.trees().iter().map(|t| t.predict_proba(&q).unwrap()).collect();
        let p = forest.predict_proba(&q).unwrap();
        let lo = per_tree.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = per_tree.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= p && p <= hi);

        let mut doc: serde_json::Value = serde_json::from_str(&forest.to_json()).unwrap();
        doc["trees"].as_array_mut().unwrap().reverse();
        doc["inbag_indices"].as_array_mut().unwrap().reverse();
        let reversed = treesmooth::FittedForest::from_json(&doc.to_string()).unwrap();
        prop_assert!((reversed.predict_proba(&q).unwrap() - p).abs() <= 1e-12);
    }

    #[test]
    fn identical_trees_without_bootstrap(seed in any::<u64>(), n_trees in 1usize..3, q in prop::collection::vec(0.0f64..8.0, 2)) {
        let ds = random_dataset(seed, 40, 2, 8);
        let mut cfg = ForestConfig { n_trees, bootstrap: false, ..ForestConfig::default() }.with_seed(seed);
        cfg.tree.max_features = treesmooth::MaxFeatures::All;
        let forest = fit_forest(&ds, &cfg).unwrap();
        let first = forest.trees()[0].predict_proba(&q).unwrap();
        prop_assert!(forest.trees().iter().all(|t| t == &forest.trees()[0]));
        prop_assert_eq!(forest.predict_proba(&q).unwrap(), first);
    }

    #[test]
    fn calibration_preserves_structure(seed in any::<u64>(), lambda in 0.0f64..500.0, a in 1.0f64..1500.0, b in 1.0f64..1500.0) {
        let (_, tree) = random_tree(seed);
        let before = node_signature(tree.root());
        let mut hs = tree.root().clone();
        hs_calibrate(&mut hs, lambda).unwrap();
        prop_assert_eq!(&node_signature(&hs), &before);
        let mut beta = tree.root().clone();
        beta_calibrate(&mut beta, BetaParams::new(a, b).unwrap()).unwrap();
        prop_assert_eq!(&node_signature(&beta), &before);
    }

    #[test]
    fn hs_increments_shrink_with_lambda(seed in any::<u64>(), q in prop::collection::vec(0.0f64..12.0, 4)) {
        let (_, tree) = random_tree(seed);
        let d = tree.n_features();
        let x = &q[..d];
        let depth = tree.find_path(x).unwrap().depth();
        let lambdas = [0.0, 0.001, 0.1, 1.0, 10.0, 50.0, 200.0, 1e4];
        for l in 1..=depth {
            let upper = truncate_along(tree.root(), x, l);
            let lower = truncate_along(tree.root(), x, l - 1);
            let increments: Vec<f64> = lambdas
                .iter()
                .map(|&lam| (hs_value(&upper, d, x, lam) - hs_value(&lower, d, x, lam)).abs())
                .collect();
            for w in increments.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-15, "increment {} grew: {:?}", l, increments);
            }
        }
    }

    #[test]
    fn strong_priors_dominate_small_trees(seed in any::<u64>()) {
        let (_, tree) = random_tree(seed);
        let paths = leaf_paths(tree.root());
        let max_total = paths.iter().map(|p| p.iter().map(|n| n.n_samples()).sum::<usize>()).max().unwrap();
        prop_assume!(max_total < 1000);
        let mut toward0 = tree.root().clone();
        beta_calibrate(&mut toward0, BetaParams::new(1500.0, 1.0).unwrap()).unwrap();
        prop_assert!(leaf_values(&toward0).iter().all(|&v| v < 0.5));
        let mut toward1 = tree.root().clone();
        beta_calibrate(&mut toward1, BetaParams::new(1.0, 1500.0).unwrap()).unwrap();
        prop_assert!(leaf_values(&toward1).iter().all(|&v| v > 0.5));
    }
}

proptest! {
    #[test]
    fn cdf_reflection(x in 0.0f64..=1.0, a in 0.5f64..2000.0, b in 0.5f64..2000.0) {
        let lhs = beta_cdf(x, BetaParams::new(a, b).unwrap()).unwrap();
        let rhs = beta_cdf(1.0 - x, BetaParams::new(b, a).unwrap()).unwrap();
        prop_assert!((lhs + rhs - 1.0).abs() <= 1e-12, "{} + {} at x={}", lhs, rhs, x);
    }

    #[test]
    fn ppf_inverts_cdf(a in 0.5f64..2000.0, b in 0.5f64..2000.0) {
        let p = BetaParams::new(a, b).unwrap();
        let qs = [1e-6, 1e-4, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0 - 1e-4, 1.0 - 1e-6];
        let mut prev = 0.0;
        for &q in &qs {
            let x = beta_ppf(q, p).unwrap();
            prop_assert!((beta_cdf(x, p).unwrap() - q).abs() <= 1e-8);
            prop_assert!(x > prev, "ppf not increasing at q={}", q);
            prev = x;
        }
    }

    #[test]
    fn ppf_at_mean_sits_on_the_larger_parameter_side_of_the_median(a in 1.0f64..2000.0, b in 1.0f64..2000.0, tie in any::<bool>()) {
        let b = if tie { a } else { b };
        let p = BetaParams::new(a, b).unwrap();
        let at_mean = beta_ppf(p.mean(), p).unwrap();
        let median = beta_ppf(0.5, p).unwrap();
        prop_assert!(at_mean > 0.0 && at_mean < 1.0);
        if a == b {
            prop_assert!((at_mean - median).abs() <= 1e-12);
        } else {
            prop_assert_eq!(at_mean > median, a > b);
        }
    }

    #[test]
    fn auc_estimators_agree(
        data in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
        flip in any::<bool>(),
    ) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 19.0).collect();
        let mut labels: Vec<u8> = data.iter().map(|(_, l)| u8::from(*l)).collect();
        labels[0] = u8::from(flip);
        labels[1] = u8::from(!flip);
        let sp = ScoredPredictions::new(scores.clone(), labels.clone()).unwrap();
        let a = roc_auc_pairs(&sp).unwrap();
        prop_assert!((roc_auc_trapezoid(&sp).unwrap() - a).abs() <= 1e-12);

        // strictly increasing transform
        let warped: Vec<f64> = scores.iter().map(|s| s.powi(3) * 0.5 + 0.1).collect();
        let w = roc_auc_pairs(&ScoredPredictions::new(warped, labels.clone()).unwrap()).unwrap();
        prop_assert!((w - a).abs() <= 1e-12);

        // complement symmetry
        let flipped_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let flipped_labels: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let c = ScoredPredictions::new(flipped_scores, flipped_labels).unwrap();
        prop_assert!((roc_auc_trapezoid(&c).unwrap() - a).abs() <= 1e-12);
    }
}
