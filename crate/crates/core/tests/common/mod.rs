#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treesmooth::cart::{fit_tree, DecisionTree, MaxFeatures, TreeConfig, TreeNode};
use treesmooth::dataset::Dataset;

/// Random binary dataset with integer-valued features in `0..levels`, so
/// ties and duplicate rows occur. Both classes are always present.
pub fn random_dataset(seed: u64, n: usize, d: usize, levels: u32) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0..levels) as f64).collect())
        .collect();
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut labels: Vec<u8> = rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / levels as f64;
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-3.0 * s).exp()))
        })
        .collect();
    labels[0] = 0;
    labels[1] = 1;
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new("random", names, rows, labels).unwrap()
}

/// A tree fitted on a random dataset with random settings.
pub fn random_tree(seed: u64) -> (Dataset, DecisionTree) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.random_range(8..160);
    let d = rng.random_range(1..5);
    let levels = rng.random_range(2..12);
    let ds = random_dataset(seed, n, d, levels);
    let cfg = TreeConfig {
        max_depth: if rng.random_bool(0.3) {
            Some(rng.random_range(1..6))
        } else {
            None
        },
        min_samples_leaf: rng.random_range(1..4),
        max_features: if rng.random_bool(0.5) {
            MaxFeatures::All
        } else {
            MaxFeatures::Sqrt
        },
        rng_seed: seed,
    };
    let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let tree = fit_tree(&ds, &indices, &cfg).unwrap();
    (ds, tree)
}

/// Every root-to-leaf node sequence, found with an explicit stack.
pub fn leaf_paths(root: &TreeNode) -> Vec<Vec<&TreeNode>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![root]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        match last.split() {
            None => out.push(path),
            Some(s) => {
                let mut l = path.clone();
                l.push(&s.left);
                let mut r = path;
                r.push(&s.right);
                stack.push(r);
                stack.push(l);
            }
        }
    }
    out
}

pub fn leaf_values(root: &TreeNode) -> Vec<f64> {
    let mut out = Vec::new();
    root.for_each_node(&mut |n| {
        if n.is_leaf() {
            out.push(n.leaf_value());
        }
    });
    out
}
