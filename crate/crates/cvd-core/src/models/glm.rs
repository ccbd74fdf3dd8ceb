//! Fixed-effects outcome GLM with logit or identity link.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_full_rank, GRAD_TOL, MAX_HALVINGS, MAX_ITER, SEP_EPS};
use crate::data::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::kahan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Identity,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Identity => eta,
        }
    }
}

/// A fitted outcome GLM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmFit {
    pub theta: DVector<f64>,
    /// Inverse observed information at `theta`.
    pub vcov: DMatrix<f64>,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Pooled residual standard deviation; present for identity-link fits.
    pub residual_sd: Option<f64>,
    /// Logit only: some fitted probability was within 1e-12 of 0 or 1.
    pub separation: bool,
    pub coefficient_names: Vec<String>,
}

impl GlmFit {
    /// Mean response for a regressor vector.
    pub fn predict_mean(&self, row: &DVector<f64>) -> Result<f64> {
        if row.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: row.len(),
            });
        }
        Ok(self.link.inverse(self.theta.dot(row)))
    }

    /// Conditional outcome variance: Bernoulli `m(1-m)` for a binary outcome,
    /// the pooled residual variance for a continuous one.
    pub fn conditional_variance(&self, row: &DVector<f64>, kind: OutcomeKind) -> Result<f64> {
        match kind {
            OutcomeKind::Binary => {
                let m = self.predict_mean(row)?;
                Ok(m * (1.0 - m))
            }
            OutcomeKind::Continuous => {
                if row.len() != self.theta.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.theta.len(),
                        got: row.len(),
                    });
                }
                let sd = self.residual_sd.unwrap_or(0.0);
                Ok(sd * sd)
            }
        }
    }
}

/// Fits the outcome model on the dataset's full interaction design.
pub fn fit_glm(dataset: &Dataset, link: Link) -> Result<GlmFit> {
    let n = dataset.n();
    let q = dataset.design_width();
    let mut x = DMatrix::zeros(n, q);
    for i in 0..n {
        let row = dataset.design_row(i, dataset.a[i], dataset.z[i])?;
        x.row_mut(i).copy_from(&row.transpose());
    }
    let y = DVector::from_column_slice(&dataset.y);
    fit_glm_raw(&x, &y, link, dataset.design_names())
}

/// Fits a GLM on an explicit design matrix.
pub fn fit_glm_raw(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    link: Link,
    names: Vec<String>,
) -> Result<GlmFit> {
    check_full_rank(x, &names)?;
    match link {
        Link::Identity => fit_identity(x, y, names),
        Link::Logit => fit_logit(x, y, names),
    }
}

fn fit_identity(x: &DMatrix<f64>, y: &DVector<f64>, names: Vec<String>) -> Result<GlmFit> {
    let n = x.nrows() as f64;
    let gram = x.transpose() * x;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficientDesign(names.clone()))?;
    let theta = chol.solve(&(x.transpose() * y));

    let residuals: Vec<f64> = (y - x * &theta).iter().copied().collect();
    // Sample variance of residuals with the n-1 denominator, mean subtracted.
    let sigma2 = kahan::sample_variance(&residuals);
    let sigma2 = sigma2.max(f64::MIN_POSITIVE);
    let residual_sd = sigma2.sqrt();

    let vcov = chol.inverse() * sigma2;
    let rss = kahan::sum(&residuals.iter().map(|r| r * r).collect::<Vec<_>>());
    let log_likelihood =
        -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - rss / (2.0 * sigma2);

    Ok(GlmFit {
        theta,
        vcov,
        link: Link::Identity,
        converged: true,
        iterations: 1,
        log_likelihood,
        residual_sd: Some(residual_sd),
        separation: false,
        coefficient_names: names,
    })
}

fn bernoulli_ll(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    let mut acc = kahan::KahanSum::new();
    for i in 0..y.len() {
        // log(1+e^eta) computed stably
        let e = eta[i];
        let log1pe = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        acc.add(y[i] * e - log1pe);
    }
    acc.total()
}

fn fit_logit(x: &DMatrix<f64>, y: &DVector<f64>, names: Vec<String>) -> Result<GlmFit> {
    let n = x.nrows();
    let q = x.ncols();
    let mut theta = DVector::zeros(q);
    let mut ll = bernoulli_ll(x, y, &theta);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut info = DMatrix::zeros(q, q);

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let eta = x * &theta;
        let p: DVector<f64> = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = x.transpose() * (y - &p);
        grad_norm = grad.amax();

        // Observed information X' W X with W = p(1-p), floored to keep the
        // solve well posed under separation.
        let w: DVector<f64> = p.map(|pi| (pi * (1.0 - pi)).max(1e-10));
        let mut xw = x.clone();
        for i in 0..n {
            let wi = w[i];
            for c in 0..q {
                xw[(i, c)] *= wi;
            }
        }
        info = x.transpose() * xw;

        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }

        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficientDesign(names.clone()))?
            .solve(&grad);

        // Step-halving: shrink until the log-likelihood does not decrease.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &theta + &step * scale;
            let cand_ll = bernoulli_ll(x, y, &candidate);
            if cand_ll >= ll {
                theta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No improving step exists; the gradient check above decides
            // convergence on the next pass.
            break;
        }
    }

    if !converged {
        return Err(Error::NotConverged {
            iterations,
            gradient_norm: grad_norm,
        });
    }

    let vcov = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficientDesign(names.clone()))?
        .inverse();

    let eta = x * &theta;
    let separation = eta
        .iter()
        .map(|&e| 1.0 / (1.0 + (-e).exp()))
        .any(|p| p < SEP_EPS || p > 1.0 - SEP_EPS);

    Ok(GlmFit {
        theta,
        vcov,
        link: Link::Logit,
        converged,
        iterations,
        log_likelihood: ll,
        residual_sd: None,
        separation,
        coefficient_names: names,
    })
}
