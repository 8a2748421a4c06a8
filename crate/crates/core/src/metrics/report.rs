use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{binary_accuracy, check_rows, roc_curve, RocCurve};
use crate::data::CLASS_NAMES;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// One entry per class; `None` when the class lacks positives or negatives.
    pub per_class_auc: Vec<Option<f64>>,
    /// Mean AUC over classes with both label values, if any.
    pub macro_auc: Option<f64>,
    /// Entry-wise accuracy at threshold 0.5.
    pub accuracy: f64,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub curves: Vec<RocCurve>,
}

impl EvalReport {
    pub fn skipped(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class_auc.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i)
    }
}

/// Scores `probs` (`[N][K]` probabilities) against multi-hot `targets`.
pub fn evaluate(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<EvalReport> {
    check_rows(probs, targets)?;
    let k = probs[0].len();
    let mut report = EvalReport {
        per_class_auc: Vec::with_capacity(k),
        macro_auc: None,
        accuracy: binary_accuracy(probs, targets, 0.5)?,
        positives: Vec::with_capacity(k),
        negatives: Vec::with_capacity(k),
        curves: Vec::new(),
    };
    for class in 0..k {
        let scores: Vec<f64> = probs.iter().map(|p| p[class]).collect();
        let labels: Vec<bool> = targets.iter().map(|y| y[class] > 0.5).collect();
        let pos = labels.iter().filter(|l| **l).count();
        report.positives.push(pos);
        report.negatives.push(labels.len() - pos);
        match roc_curve(&scores, &labels, class) {
            Ok(curve) => {
                report.per_class_auc.push(Some(curve.auc));
                report.curves.push(curve);
            }
            Err(Error::DegenerateClass { .. }) => report.per_class_auc.push(None),
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = report.per_class_auc.iter().flatten().copied().collect();
    if !defined.is_empty() {
        report.macro_auc = Some(defined.iter().sum::<f64>() / defined.len() as f64);
    }
    Ok(report)
}

fn class_name(i: usize) -> String {
    CLASS_NAMES.get(i).map_or_else(|| format!("class_{i}"), |n| (*n).to_string())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `eval.csv`: header `accuracy,macro_auc` and one data row. An undefined
/// macro AUC is left empty.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    write(path, &format!("accuracy,macro_auc\n{},{}\n", report.accuracy, fmt_opt(report.macro_auc)))
}

pub struct RocFile {
    pub class_index: usize,
    pub path: PathBuf,
}

/// Writes `roc_<class>.csv` (`fpr,tpr`) for every non-degenerate class and
/// `roc_summary.csv` (`class,auc,n_pos,n_neg`, empty auc when skipped).
/// Spaces in class names become underscores.
pub fn write_roc_files(dir: &Path, report: &EvalReport) -> Result<Vec<RocFile>> {
    let mut files = Vec::new();
    for curve in &report.curves {
        let name = class_name(curve.class_index).replace(' ', "_");
        let path = dir.join(format!("roc_{name}.csv"));
        let mut text = String::from("fpr,tpr\n");
        for (f, t) in &curve.points {
            writeln!(text, "{f},{t}").expect("writing to a String");
        }
        write(&path, &text)?;
        files.push(RocFile {
            class_index: curve.class_index,
            path,
        });
    }
    let mut summary = String::from("class,auc,n_pos,n_neg\n");
    for (i, auc) in report.per_class_auc.iter().enumerate() {
        writeln!(
            summary,
            "{},{},{},{}",
            class_name(i),
            fmt_opt(*auc),
            report.positives[i],
            report.negatives[i]
        )
        .expect("writing to a String");
    }
    write(&dir.join("roc_summary.csv"), &summary)?;
    Ok(files)
}
