mod common;

use common::leaf_values;
use treesmooth::betafun::BetaParams;
use treesmooth::cart::{DecisionTree, TreeNode};
use treesmooth::dataset::{load_bundled, registry_names};
use treesmooth::forest::{fit_forest, ForestConfig};
use treesmooth::regularize::{apply, beta_calibrate, RegularizerSpec};

fn forest_on(name: &str, n_trees: usize) -> (treesmooth::Dataset, treesmooth::FittedForest) {
    let ds = load_bundled(name).unwrap();
    let cfg = ForestConfig {
        n_trees,
        ..ForestConfig::default()
    }
    .with_seed(17);
    let f = fit_forest(&ds, &cfg).unwrap();
    (ds, f)
}

#[test]
fn beta_leaves_strictly_inside_unit_interval_on_bundled_data() {
    let priors = [
        (1.0, 1.0),
        (1500.0, 1.0),
        (1.0, 1500.0),
        (1500.0, 1500.0),
        (30.0, 800.0),
    ];
    for name in registry_names() {
        let (_, forest) = forest_on(&name, 10);
        for (a, b) in priors {
            let cal = apply(&forest, RegularizerSpec::beta(a, b).unwrap()).unwrap();
            for tree in cal.trees() {
                for v in leaf_values(tree.root()) {
                    assert!(v > 0.0 && v < 1.0, "{name} prior ({a}, {b}): leaf {v}");
                }
            }
        }
    }
}

#[test]
fn no_op_and_zero_shrinkage_keep_predictions() {
    let (ds, forest) = forest_on("heart", 20);
    let before = forest.clone();
    let none = apply(&forest, RegularizerSpec::None).unwrap();
    let hs0 = apply(&forest, RegularizerSpec::hs(0.0).unwrap()).unwrap();
    for i in 0..ds.n_samples() {
        let p = forest.predict_proba(ds.row(i)).unwrap();
        assert_eq!(none.predict_proba(ds.row(i)).unwrap(), p);
        assert!((hs0.predict_proba(ds.row(i)).unwrap() - p).abs() <= 1e-12);
    }
    assert_eq!(forest, before);
}

#[test]
fn repeated_calibration_is_identical() {
    let (_, forest) = forest_on("diabetes", 8);
    let spec = RegularizerSpec::beta(100.0, 50.0).unwrap();
    assert_eq!(apply(&forest, spec).unwrap(), apply(&forest, spec).unwrap());
}

#[test]
fn pure_deep_leaf_is_pulled_toward_ancestors() {
    // root (6, 6) -> left (5, 1) -> left leaf (4, 0)
    let inner = TreeNode::internal(
        1,
        0.5,
        TreeNode::leaf(4, 0).unwrap(),
        TreeNode::leaf(1, 1).unwrap(),
    );
    let root = TreeNode::internal(0, 0.5, inner, TreeNode::leaf(1, 5).unwrap());
    let tree = DecisionTree::new(root, 2).unwrap();
    let root_mean = tree.root().mean_response();
    let x = [0.0, 0.0];
    assert_eq!(tree.predict_proba(&x).unwrap(), 0.0);

    let mut cal = tree.root().clone();
    beta_calibrate(&mut cal, BetaParams::new(1.0, 1.0).unwrap()).unwrap();
    let v = DecisionTree::new(cal, 2)
        .unwrap()
        .predict_proba(&x)
        .unwrap();
    assert!(0.0 < v && v < root_mean, "{v}");
}
