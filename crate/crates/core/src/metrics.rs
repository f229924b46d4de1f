//! Balanced accuracy and ROC-AUC.
//!
//! AUC has two estimators that must agree: a brute-force pair count
//! (Mann-Whitney, ties worth one half) and the trapezoid rule over the ROC
//! curve with tied scores merged into single steps.

use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric undefined: no samples of class {0}")]
    AbsentClass(u8),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not in [0, 1]")]
    BadScore(f64),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

/// 2x2 confusion counts; `tp[i]` are class-`i` samples predicted as `i`,
/// `fn_[i]` class-`i` samples predicted otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: [usize; 2],
    pub fn_: [usize; 2],
}

impl ConfusionMatrix {
    pub fn from_predictions(labels: &[u8], predicted: &[u8]) -> Result<Self, MetricError> {
        if labels.len() != predicted.len() {
            return Err(MetricError::LengthMismatch {
                scores: predicted.len(),
                labels: labels.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            if y > 1 {
                return Err(MetricError::BadLabel(y));
            }
            if y == p {
                cm.tp[y as usize] += 1;
            } else {
                cm.fn_[y as usize] += 1;
            }
        }
        Ok(cm)
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.tp[class] + self.fn_[class]
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self.tp[0] + self.tp[1];
        correct as f64 / (self.class_total(0) + self.class_total(1)) as f64
    }
}

/// Mean of the per-class recalls.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    for class in 0..2 {
        let total = cm.class_total(class);
        if total == 0 {
            return Err(MetricError::AbsentClass(class as u8));
        }
        sum += cm.tp[class] as f64 / total as f64;
    }
    Ok(sum / 2.0)
}

/// Class-1 scores with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MetricError::BadScore(s));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(MetricError::BadLabel(l));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn class_sizes(&self) -> Result<(usize, usize), MetricError> {
        let n1 = self.labels.iter().filter(|&&l| l == 1).count();
        let n0 = self.labels.len() - n1;
        if n0 == 0 {
            return Err(MetricError::AbsentClass(0));
        }
        if n1 == 0 {
            return Err(MetricError::AbsentClass(1));
        }
        Ok((n0, n1))
    }
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc_pairs(sp: &ScoredPredictions) -> Result<f64, MetricError> {
    let (n0, n1) = sp.class_sizes()?;
    let pos: Vec<f64> = sp
        .scores
        .iter()
        .zip(&sp.labels)
        .filter(|p| *p.1 == 1)
        .map(|p| *p.0)
        .collect();
    let neg: Vec<f64> = sp
        .scores
        .iter()
        .zip(&sp.labels)
        .filter(|p| *p.1 == 0)
        .map(|p| *p.0)
        .collect();
    // twice the U statistic, so ties stay integral
    let mut twice_u: u64 = 0;
    for &p in &pos {
        for &q in &neg {
            twice_u += match p.partial_cmp(&q).expect("scores are finite") {
                Ordering::Greater => 2,
                Ordering::Equal => 1,
                Ordering::Less => 0,
            };
        }
    }
    Ok(twice_u as f64 / (2 * n0 * n1) as f64)
}

/// One ROC vertex: cumulative counts above a score threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// ROC vertices from `(0, 0)` to `(n0, n1)`, one per distinct score,
/// thresholds descending.
pub fn roc_curve(sp: &ScoredPredictions) -> Result<Vec<RocPoint>, MetricError> {
    sp.class_sizes()?;
    let mut order: Vec<usize> = (0..sp.scores.len()).collect();
    order.sort_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        true_positives: 0,
        false_positives: 0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = sp.scores[order[i]];
        while i < order.len() && sp.scores[order[i]] == s {
            if sp.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(RocPoint {
            threshold: s,
            true_positives: tp,
            false_positives: fp,
        });
    }
    Ok(curve)
}

/// Trapezoid-rule area under the ROC curve.
pub fn roc_auc_trapezoid(sp: &ScoredPredictions) -> Result<f64, MetricError> {
    let (n0, n1) = sp.class_sizes()?;
    let curve = roc_curve(sp)?;
    // Each trapezoid has area dFP * (TP_prev + TP) / 2 in count units;
    // accumulating the doubled area keeps the sum exact.
    let twice_area: u64 = curve
        .windows(2)
        .map(|w| {
            ((w[1].false_positives - w[0].false_positives)
                * (w[0].true_positives + w[1].true_positives)) as u64
        })
        .sum();
    Ok(twice_area as f64 / (2 * n0 * n1) as f64)
}

/// Balanced accuracy of thresholded scores (label 1 iff score >= 0.5).
pub fn balanced_accuracy_from_scores(sp: &ScoredPredictions) -> Result<f64, MetricError> {
    let predicted: Vec<u8> = sp
        .scores
        .iter()
        .map(|&s| crate::forest::label_from_proba(s))
        .collect();
    balanced_accuracy(&ConfusionMatrix::from_predictions(&sp.labels, &predicted)?)
}
