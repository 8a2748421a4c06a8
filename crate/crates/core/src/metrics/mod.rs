//! Thresholded accuracy, ROC curves and AUC for multi-label predictions.

mod report;

pub use report::{evaluate, write_eval_csv, write_roc_files, EvalReport, RocFile};

use crate::error::{Error, Result};

/// Fraction of entries where `(p ≥ threshold) == (y = 1)`, over all N·K cells.
pub fn binary_accuracy(probs: &[Vec<f64>], targets: &[Vec<f64>], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    check_rows(probs, targets)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, y) in probs.iter().zip(targets) {
        for (p, y) in p.iter().zip(y) {
            hits += usize::from((*p >= threshold) == (*y > 0.5));
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

fn check_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    let shape = |m: &[Vec<f64>]| vec![m.len(), m.first().map_or(0, Vec::len)];
    if a.is_empty() || a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len() || x.is_empty()) {
        return Err(Error::Shape {
            op: "metrics",
            lhs: shape(a),
            rhs: shape(b),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub class_index: usize,
    /// `(fpr, tpr)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve of one class. Thresholds sweep the distinct scores in
/// descending order, so tied scores enter together as one point.
pub fn roc_curve(scores: &[f64], labels: &[bool], class_index: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "roc_curve",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("ROC scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateClass { class: class_index });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    // The last distinct score already reaches (1,1); pin it exactly.
    *points.last_mut().expect("at least one score") = (1.0, 1.0);
    let auc = trapezoid(&points);
    Ok(RocCurve {
        class_index,
        points,
        auc,
    })
}

/// Area under a piecewise-linear curve.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}
