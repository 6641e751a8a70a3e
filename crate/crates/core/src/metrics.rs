//! Reconstruction metrics and the two reference solvers used in the
//! benchmark sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Support-recovery scores at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics {
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Squared Frobenius error normalized by the energy of the truth.
pub fn nmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::invalid("nmse: shape mismatch"));
    }
    let denom = truth.iter().map(|v| v * v).sum::<f64>();
    if denom == 0.0 {
        return Err(Error::invalid("nmse undefined for an all-zero truth"));
    }
    let num = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    Ok(num / denom)
}

/// Precision/recall/F of the thresholded support against the true pattern.
///
/// Degenerate cases: both supports empty counts as perfect agreement (F = 1);
/// an empty prediction against a nonempty truth (or vice versa) scores 0.
pub fn f_measure(
    support_probs: &DMatrix<f64>,
    truth_support: &DMatrix<f64>,
    threshold: f64,
) -> Result<SupportMetrics> {
    if support_probs.shape() != truth_support.shape() {
        return Err(Error::invalid("f_measure: shape mismatch"));
    }
    if support_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::invalid("support probabilities must lie in [0, 1]"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut any_truth = false;
    let mut any_pred = false;
    for (p, t) in support_probs.iter().zip(truth_support.iter()) {
        let pred = *p > threshold;
        let actual = *t > 0.5;
        any_pred |= pred;
        any_truth |= actual;
        match (pred, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if !any_truth && !any_pred {
        return Ok(SupportMetrics {
            f_measure: 1.0,
            precision: 1.0,
            recall: 1.0,
        });
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SupportMetrics {
        f_measure: f,
        precision,
        recall,
    })
}

/// Least-squares refit on a column subset, minimum-norm when rank deficient.
fn least_squares_on(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(support.iter());
    let svd = sub.svd(true, true);
    svd.solve(y, 1e-12).expect("svd solve")
}

/// Orthogonal matching pursuit: greedy correlation selection with a full
/// least-squares refit after each pick, `k` steps. Ties in the correlation go
/// to the lowest index so the output is deterministic.
pub fn omp(a: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    let (n, d) = (a.nrows(), a.ncols());
    if y.len() != n {
        return Err(Error::invalid("omp: observation length mismatch"));
    }
    if k > n.min(d) {
        return Err(Error::invalid(format!(
            "omp: sparsity {k} exceeds min(N, D) = {}",
            n.min(d)
        )));
    }
    for j in 0..d {
        if a.column(j).norm() == 0.0 {
            return Err(Error::invalid(format!("omp: column {j} is zero")));
        }
    }
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut residual = y.clone();
    let mut coef = DVector::zeros(d);
    for _ in 0..k {
        let mut best = usize::MAX;
        let mut best_corr = -1.0;
        for j in 0..d {
            if support.contains(&j) {
                continue;
            }
            let c = a.column(j).dot(&residual).abs();
            if c > best_corr {
                best_corr = c;
                best = j;
            }
        }
        support.push(best);
        let solution = least_squares_on(a, y, &support);
        coef.fill(0.0);
        for (pos, &j) in support.iter().enumerate() {
            coef[j] = solution[pos];
        }
        residual = y - a * &coef;
    }
    Ok(coef)
}

/// Ridge regression restricted to a known support; zero elsewhere.
pub fn oracle_ridge(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    true_support: &[bool],
    lambda: f64,
) -> Result<DVector<f64>> {
    let (n, d) = (a.nrows(), a.ncols());
    if y.len() != n || true_support.len() != d {
        return Err(Error::invalid("oracle_ridge: shape mismatch"));
    }
    let support: Vec<usize> = (0..d).filter(|&j| true_support[j]).collect();
    let mut coef = DVector::zeros(d);
    if support.is_empty() {
        return Ok(coef);
    }
    let sub = a.select_columns(support.iter());
    let mut gram = sub.transpose() * &sub;
    for i in 0..support.len() {
        gram[(i, i)] += lambda;
    }
    let rhs = sub.transpose() * y;
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("oracle ridge normal equations not PD"))?
        .solve(&rhs);
    for (pos, &j) in support.iter().enumerate() {
        coef[j] = sol[pos];
    }
    Ok(coef)
}
