//! Maximum-likelihood fitting for the three plug-in models: the fixed-effects
//! outcome GLM, the hospital-assignment multinomial, and the group-membership
//! multinomial. All fits use Newton-Raphson with step-halving (up to 30
//! halvings per step, 100 iterations, gradient max-norm tolerance 1e-8) from
//! all-zero starting values, and report the inverse observed information as
//! the coefficient covariance.

mod glm;
mod multinomial;

pub use glm::{fit_glm, fit_glm_raw, GlmFit, Link};
pub use multinomial::{fit_multinomial, MultinomialFit};

pub(crate) use multinomial::softmax_in_place as softmax;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;

pub(crate) const GRAD_TOL: f64 = 1e-8;
pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 30;
/// Fitted probabilities outside [SEP_EPS, 1-SEP_EPS] raise the separation flag.
pub(crate) const SEP_EPS: f64 = 1e-12;

/// The fitted triple consumed by the decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModels {
    /// Outcome GLM, E(Y | A, Z, X).
    pub outcome: GlmFit,
    /// Hospital assignment, P(A | Z, X), regressors [1, X, I(Z=2..K)].
    pub hospital: MultinomialFit,
    /// Group membership, P(Z | X), regressors [1, X].
    pub group: MultinomialFit,
    pub j: usize,
    pub k: usize,
    pub p: usize,
}

impl FittedModels {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fits all three models on a dataset.
///
/// `link` applies to the outcome model; the assignment models are always
/// multinomial logistic.
pub fn fit_models(dataset: &Dataset, link: Link) -> Result<FittedModels> {
    let outcome = fit_glm(dataset, link)?;

    let (hosp_features, hosp_names) = hospital_features(dataset);
    let hospital = fit_multinomial(&hosp_features, &dataset.a, dataset.j, &hosp_names)?;

    let (grp_features, grp_names) = group_features(dataset);
    let group = fit_multinomial(&grp_features, &dataset.z, dataset.k, &grp_names)?;

    Ok(FittedModels {
        outcome,
        hospital,
        group,
        j: dataset.j,
        k: dataset.k,
        p: dataset.p(),
    })
}

/// Regressors for the hospital model: intercept, covariates, group dummies.
pub fn hospital_features(dataset: &Dataset) -> (DMatrix<f64>, Vec<String>) {
    let n = dataset.n();
    let p = dataset.p();
    let q = 1 + p + (dataset.k - 1);
    let mut m = DMatrix::zeros(n, q);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for (c, &v) in dataset.x_row(i).iter().enumerate() {
            m[(i, 1 + c)] = v;
        }
        if dataset.z[i] > 1 {
            m[(i, 1 + p + dataset.z[i] - 2)] = 1.0;
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(dataset.covariate_names.iter().cloned());
    for z in 2..=dataset.k {
        names.push(format!("Z={}", dataset.group_map.label(z)));
    }
    (m, names)
}

/// Regressors for the group model: intercept and covariates.
pub fn group_features(dataset: &Dataset) -> (DMatrix<f64>, Vec<String>) {
    let n = dataset.n();
    let p = dataset.p();
    let mut m = DMatrix::zeros(n, 1 + p);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for (c, &v) in dataset.x_row(i).iter().enumerate() {
            m[(i, 1 + c)] = v;
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(dataset.covariate_names.iter().cloned());
    (m, names)
}

/// Errors out with the dependent column names when `x` is not full column rank.
///
/// Pivoted Cholesky of the Gram matrix, processed in column order: a column
/// whose residual norm after projection onto the accepted columns is
/// negligible is reported as dependent.
pub(crate) fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let q = x.ncols();
    let gram = x.transpose() * x;
    let scale = (0..q).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max).max(1.0);
    let tol = scale * 1e-10;
    // Incremental Cholesky; l holds rows of the factor for accepted columns.
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut accepted: Vec<usize> = Vec::with_capacity(q);
    let mut dependent = Vec::new();
    for col in 0..q {
        let mut row = Vec::with_capacity(accepted.len() + 1);
        for (r_idx, &acc) in accepted.iter().enumerate() {
            let mut v = gram[(col, acc)];
            for t in 0..r_idx {
                v -= row[t] * l[r_idx][t];
            }
            v /= l[r_idx][r_idx];
            row.push(v);
        }
        let mut d = gram[(col, col)];
        for &v in &row {
            d -= v * v;
        }
        if d <= tol {
            dependent.push(names.get(col).cloned().unwrap_or_else(|| format!("col{col}")));
        } else {
            row.push(d.sqrt());
            l.push(row);
            accepted.push(col);
        }
    }
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(crate::Error::RankDeficientDesign(dependent))
    }
}
