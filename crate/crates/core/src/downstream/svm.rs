//! RBF-kernel C-SVC trained by sequential minimal optimization.
//!
//! The solver works the dual problem with maximal-violating-pair working-set
//! selection and stops when the KKT gap drops below the tolerance.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// KKT stopping tolerance of the dual solver.
pub const KKT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiclass {
    OneVsRest,
    OneVsOne,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Soft-margin cost.
    pub c: f64,
    /// RBF width; `None` uses 1 / (n_features * feature variance).
    pub gamma: Option<f64>,
    pub multiclass: Multiclass,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 10.0,
            gamma: None,
            multiclass: Multiclass::OneVsRest,
        }
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
    }
    (-gamma * sq).exp()
}

/// One trained binary machine: support vectors with signed weights.
#[derive(Debug, Clone)]
struct BinarySvm {
    support: Vec<Vec<f64>>,
    /// alpha_i * y_i per support vector.
    coef: Vec<f64>,
    rho: f64,
    /// Final KKT gap, for post-fit verification.
    kkt_gap: f64,
}

impl BinarySvm {
    fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        let mut acc = 0.0;
        for (sv, &w) in self.support.iter().zip(&self.coef) {
            acc += w * rbf(sv, x, gamma);
        }
        acc - self.rho
    }
}

/// Solve the binary dual with labels y in {-1,+1}. Returns the machine.
fn smo_train(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> BinarySvm {
    let n = x.len();
    // full kernel matrix: downstream sets are small by construction
    let mut kernel = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let k = rbf(&x[i], &x[j], gamma);
            kernel[(i, j)] = k;
            kernel[(j, i)] = k;
        }
    }

    let mut alpha = vec![0.0f64; n];
    // gradient of the dual objective; starts at -1
    let mut grad = vec![-1.0f64; n];
    let tau = 1e-12;
    let max_iter = 100_000.max(n * 200);
    let mut kkt_gap = f64::INFINITY;

    for _ in 0..max_iter {
        // maximal violating pair
        let mut i_sel = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        for t in 0..n {
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            if in_up {
                let v = -y[t] * grad[t];
                if v > m_up {
                    m_up = v;
                    i_sel = t;
                }
            }
        }
        let mut j_sel = usize::MAX;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let in_low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if in_low {
                let v = -y[t] * grad[t];
                if v < m_low {
                    m_low = v;
                    j_sel = t;
                }
            }
        }
        kkt_gap = m_up - m_low;
        if i_sel == usize::MAX || j_sel == usize::MAX || kkt_gap < KKT_TOLERANCE {
            break;
        }
        let (i, j) = (i_sel, j_sel);

        // two-variable subproblem (equal cost C on both sides)
        let old_ai = alpha[i];
        let old_aj = alpha[j];
        if y[i] != y[j] {
            let mut quad = kernel[(i, i)] + kernel[(j, j)] + 2.0 * kernel[(i, j)];
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kernel[(i, i)] + kernel[(j, j)] - 2.0 * kernel[(i, j)];
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let dai = alpha[i] - old_ai;
        let daj = alpha[j] - old_aj;
        if dai == 0.0 && daj == 0.0 {
            break;
        }
        for t in 0..n {
            grad[t] += y[t]
                * (y[i] * kernel[(t, i)] * dai + y[j] * kernel[(t, j)] * daj);
        }
    }

    // rho from free support vectors (violating-pair midpoint otherwise)
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += y[t] * grad[t];
            free_count += 1;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        // fall back to the violating-pair midpoint
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if in_up {
                m_up = m_up.max(v);
            }
            if in_low {
                m_low = m_low.min(v);
            }
        }
        -(m_up + m_low) / 2.0
    };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    BinarySvm {
        support,
        coef,
        rho,
        kkt_gap,
    }
}

/// Multiclass RBF-SVM.
pub struct SvmModel {
    config: SvmConfig,
    gamma: f64,
    classes: Vec<usize>,
    /// OvR: one machine per class. OvO: one per (a,b) pair, a < b.
    machines: Vec<BinarySvm>,
    pairs: Vec<(usize, usize)>,
}

/// Scale-free default width: 1 / (n_features * total feature variance).
fn gamma_scale(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len();
    let n = (x.len() * d) as f64;
    let mean: f64 = x.iter().flat_map(|r| r.iter()).sum::<f64>() / n;
    let var: f64 = x
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        1.0 / d as f64
    } else {
        1.0 / (d as f64 * var)
    }
}

pub fn svm_fit(x: &[Vec<f64>], y: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data("svm_fit needs matching non-empty inputs"));
    }
    if x.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("svm_fit saw non-finite feature values"));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::data("svm_fit needs at least two classes"));
    }
    let gamma = config.gamma.unwrap_or_else(|| gamma_scale(x));

    let mut machines = Vec::new();
    let mut pairs = Vec::new();
    match config.multiclass {
        Multiclass::OneVsRest => {
            for &cls in &classes {
                let labels: Vec<f64> = y
                    .iter()
                    .map(|&l| if l == cls { 1.0 } else { -1.0 })
                    .collect();
                machines.push(smo_train(x, &labels, config.c, gamma));
            }
        }
        Multiclass::OneVsOne => {
            for ai in 0..classes.len() {
                for bi in (ai + 1)..classes.len() {
                    let (a, b) = (classes[ai], classes[bi]);
                    let mut sub_x = Vec::new();
                    let mut sub_y = Vec::new();
                    for (row, &l) in x.iter().zip(y) {
                        if l == a {
                            sub_x.push(row.clone());
                            sub_y.push(1.0);
                        } else if l == b {
                            sub_x.push(row.clone());
                            sub_y.push(-1.0);
                        }
                    }
                    machines.push(smo_train(&sub_x, &sub_y, config.c, gamma));
                    pairs.push((a, b));
                }
            }
        }
    }
    Ok(SvmModel {
        config: *config,
        gamma,
        classes,
        machines,
        pairs,
    })
}

impl SvmModel {
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Largest final KKT gap across the trained binary machines.
    pub fn max_kkt_gap(&self) -> f64 {
        self.machines
            .iter()
            .fold(0.0f64, |m, b| m.max(b.kkt_gap))
    }

    pub fn n_support_vectors(&self) -> Vec<usize> {
        self.machines.iter().map(|m| m.support.len()).collect()
    }

    /// Predicted class and per-class decision scores.
    pub fn predict(&self, x: &[f64]) -> (usize, Vec<f64>) {
        match self.config.multiclass {
            Multiclass::OneVsRest => {
                let scores: Vec<f64> = self
                    .machines
                    .iter()
                    .map(|m| m.decision(x, self.gamma))
                    .collect();
                let best = argmax(&scores);
                (self.classes[best], scores)
            }
            Multiclass::OneVsOne => {
                let mut votes = vec![0.0f64; self.classes.len()];
                let mut margins = vec![0.0f64; self.classes.len()];
                for (m, &(a, b)) in self.machines.iter().zip(&self.pairs) {
                    let d = m.decision(x, self.gamma);
                    let ai = self.classes.iter().position(|&c| c == a).unwrap();
                    let bi = self.classes.iter().position(|&c| c == b).unwrap();
                    if d >= 0.0 {
                        votes[ai] += 1.0;
                    } else {
                        votes[bi] += 1.0;
                    }
                    margins[ai] += d;
                    margins[bi] -= d;
                }
                // votes decide; accumulated margins are the ranking scores
                let best = argmax_with_tiebreak(&votes, &margins);
                (self.classes[best], margins)
            }
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let _ = values[best];
    best
}

fn argmax_with_tiebreak(primary: &[f64], secondary: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..primary.len() {
        if primary[i] > primary[best]
            || (primary[i] == primary[best] && secondary[i] > secondary[best])
        {
            best = i;
        }
    }
    best
}
