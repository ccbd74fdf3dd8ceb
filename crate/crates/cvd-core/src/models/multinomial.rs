//! Multinomial logistic regression by Newton-Raphson.
//!
//! Level 1 is the reference with implicit zero coefficients; level l >= 2 has
//! its own coefficient row over the shared regressors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_full_rank, GRAD_TOL, MAX_HALVINGS, MAX_ITER, SEP_EPS};
use crate::error::{Error, Result};
use crate::kahan;

/// A fitted multinomial logistic model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultinomialFit {
    /// (L-1) x q coefficient matrix, row l-2 for response level l.
    pub coef: DMatrix<f64>,
    /// Inverse observed information over the level-major flattened
    /// coefficient vector (row 0 of `coef` first, then row 1, ...).
    pub vcov: DMatrix<f64>,
    pub response_levels: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub separation: bool,
    pub coefficient_names: Vec<String>,
}

impl MultinomialFit {
    /// Probability vector of length L for one regressor row.
    pub fn predict_probs(&self, row: &DVector<f64>) -> Result<Vec<f64>> {
        if row.len() != self.coef.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.coef.ncols(),
                got: row.len(),
            });
        }
        let mut probs = Vec::with_capacity(self.response_levels);
        probs.push(0.0); // eta of the reference level
        for l in 0..self.coef.nrows() {
            let eta: f64 = (0..row.len()).map(|c| self.coef[(l, c)] * row[c]).sum();
            probs.push(eta);
        }
        softmax_in_place(&mut probs);
        Ok(probs)
    }
}

/// Numerically stable softmax over linear predictors (first entry is the
/// implicit zero of the reference level).
pub(crate) fn softmax_in_place(eta: &mut [f64]) {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for e in eta.iter_mut() {
        *e = (*e - max).exp();
        denom += *e;
    }
    for e in eta.iter_mut() {
        *e /= denom;
    }
}

fn log_likelihood(features: &DMatrix<f64>, labels: &[usize], coef: &DMatrix<f64>) -> f64 {
    let levels = coef.nrows() + 1;
    let q = coef.ncols();
    let mut acc = kahan::KahanSum::new();
    let mut eta = vec![0.0; levels];
    for (i, &label) in labels.iter().enumerate() {
        eta[0] = 0.0;
        for l in 0..levels - 1 {
            let mut e = 0.0;
            for c in 0..q {
                e += coef[(l, c)] * features[(i, c)];
            }
            eta[l + 1] = e;
        }
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = eta.iter().map(|&e| (e - max).exp()).sum::<f64>().ln() + max;
        acc.add(eta[label - 1] - lse);
    }
    acc.total()
}

/// Fits the model. `labels` are 1-based with every level in `1..=levels`
/// present; `features` must include an intercept column.
pub fn fit_multinomial(
    features: &DMatrix<f64>,
    labels: &[usize],
    levels: usize,
    names: &[String],
) -> Result<MultinomialFit> {
    let n = features.nrows();
    let q = features.ncols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    let mut seen = vec![false; levels];
    for &l in labels {
        if l < 1 || l > levels {
            return Err(Error::Invalid(format!("label {l} out of 1..={levels}")));
        }
        seen[l - 1] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::SingleLevelFactor("response".into()));
    }
    check_full_rank(features, names)?;

    let dim = (levels - 1) * q;
    let mut coef = DMatrix::zeros(levels - 1, q);
    let mut ll = log_likelihood(features, labels, &coef);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut info = DMatrix::zeros(dim, dim);

    let mut probs = vec![0.0; levels];
    for iter in 1..=MAX_ITER {
        iterations = iter;
        let mut grad = DVector::zeros(dim);
        info.fill(0.0);
        for i in 0..n {
            probs[0] = 0.0;
            for l in 0..levels - 1 {
                let mut e = 0.0;
                for c in 0..q {
                    e += coef[(l, c)] * features[(i, c)];
                }
                probs[l + 1] = e;
            }
            softmax_in_place(&mut probs);
            for l in 0..levels - 1 {
                let ind = if labels[i] == l + 2 { 1.0 } else { 0.0 };
                let r = ind - probs[l + 1];
                for c in 0..q {
                    grad[l * q + c] += r * features[(i, c)];
                }
            }
            for l1 in 0..levels - 1 {
                for l2 in l1..levels - 1 {
                    let w = if l1 == l2 {
                        (probs[l1 + 1] * (1.0 - probs[l1 + 1])).max(1e-12)
                    } else {
                        -probs[l1 + 1] * probs[l2 + 1]
                    };
                    for c1 in 0..q {
                        let fw = w * features[(i, c1)];
                        for c2 in 0..q {
                            info[(l1 * q + c1, l2 * q + c2)] += fw * features[(i, c2)];
                        }
                    }
                }
            }
        }
        // mirror the upper block triangle
        for l1 in 0..levels - 1 {
            for l2 in l1 + 1..levels - 1 {
                for c1 in 0..q {
                    for c2 in 0..q {
                        info[(l2 * q + c2, l1 * q + c1)] = info[(l1 * q + c1, l2 * q + c2)];
                    }
                }
            }
        }

        grad_norm = grad.amax();
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }

        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficientDesign(names.to_vec()))?
            .solve(&grad);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = coef.clone();
            for l in 0..levels - 1 {
                for c in 0..q {
                    candidate[(l, c)] += scale * step[l * q + c];
                }
            }
            let cand_ll = log_likelihood(features, labels, &candidate);
            if cand_ll >= ll {
                coef = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !converged {
        return Err(Error::NotConverged { iterations, gradient_norm: grad_norm });
    }

    let vcov = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficientDesign(names.to_vec()))?
        .inverse();

    let mut separation = false;
    for i in 0..n {
        probs[0] = 0.0;
        for l in 0..levels - 1 {
            let mut e = 0.0;
            for c in 0..q {
                e += coef[(l, c)] * features[(i, c)];
            }
            probs[l + 1] = e;
        }
        softmax_in_place(&mut probs);
        if probs.iter().any(|&p| p < SEP_EPS || p > 1.0 - SEP_EPS) {
            separation = true;
            break;
        }
    }

    let fit = MultinomialFit {
        coef,
        vcov,
        response_levels: levels,
        converged,
        iterations,
        log_likelihood: ll,
        separation,
        coefficient_names: names.to_vec(),
    };
    Ok(fit)
}
