//! Classification metrics: macro-averaged one-vs-rest AUROC, accuracy,
//! sensitivity, specificity, precision, and F1.
//!
//! AUROC uses the average-rank statistic with an exact half-integer
//! numerator, so it equals brute-force concordant-pair counting bitwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six reported metrics of a single evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub auroc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

impl MetricRun {
    /// Arithmetic mean of the six metrics.
    pub fn avg(&self) -> f64 {
        (self.auroc + self.accuracy + self.sensitivity + self.specificity + self.precision
            + self.f1)
            / 6.0
    }
}

/// Single-run metric computation with per-class warnings.
#[derive(Debug, Clone)]
pub struct MetricOutcome {
    pub run: MetricRun,
    pub warnings: Vec<String>,
}

/// One-vs-rest AUROC for one class by average ranks.
///
/// The numerator (concordant pairs + half the ties) is an exact multiple of
/// 0.5, divided once by positives x negatives.
fn auroc_one_vs_rest(scores: &[f64], is_positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks (1-based) with ties shared
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let numerator = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(numerator / (n_pos * n_neg) as f64)
}

/// Compute the six metrics for a multiclass run.
///
/// `y_scores[i][c]` ranks sample `i` for class `c`. Classes absent from
/// `y_true` are excluded from the macro means with a warning.
pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    y_scores: &[Vec<f64>],
    n_classes: usize,
) -> Result<MetricOutcome> {
    let n = y_true.len();
    if n == 0 || y_pred.len() != n || y_scores.len() != n {
        return Err(Error::data("metric inputs must be equal-length and non-empty"));
    }
    if y_scores.iter().any(|s| s.len() != n_classes) {
        return Err(Error::data("per-class score rows must have n_classes entries"));
    }

    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let accuracy = (0..n_classes).map(|c| confusion[c][c]).sum::<usize>() as f64 / n as f64;

    let mut warnings = Vec::new();
    let mut sens = Vec::new();
    let mut spec = Vec::new();
    let mut prec = Vec::new();
    let mut f1s = Vec::new();
    let mut aucs = Vec::new();

    for c in 0..n_classes {
        let tp = confusion[c][c];
        let fn_ = confusion[c].iter().sum::<usize>() - tp;
        let fp = (0..n_classes).map(|t| confusion[t][c]).sum::<usize>() - tp;
        let tn = n - tp - fn_ - fp;
        if tp + fn_ == 0 {
            warnings.push(format!("class {c} absent from y_true; excluded from macro means"));
            continue;
        }
        let se = tp as f64 / (tp + fn_) as f64;
        let sp = if tn + fp == 0 {
            0.0
        } else {
            tn as f64 / (tn + fp) as f64
        };
        let pr = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let f1 = if pr + se == 0.0 {
            0.0
        } else {
            2.0 * pr * se / (pr + se)
        };
        sens.push(se);
        spec.push(sp);
        prec.push(pr);
        f1s.push(f1);

        let scores_c: Vec<f64> = y_scores.iter().map(|s| s[c]).collect();
        let labels_c: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        if let Some(auc) = auroc_one_vs_rest(&scores_c, &labels_c) {
            aucs.push(auc);
        }
    }
    if sens.is_empty() {
        return Err(Error::data("no class present in y_true"));
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricOutcome {
        run: MetricRun {
            auroc: mean(&aucs),
            accuracy,
            sensitivity: mean(&sens),
            specificity: mean(&spec),
            precision: mean(&prec),
            f1: mean(&f1s),
        },
        warnings,
    })
}
