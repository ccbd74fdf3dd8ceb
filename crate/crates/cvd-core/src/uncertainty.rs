//! Interval estimation for the components: normal-approximation draws from
//! the fitted coefficient distributions, and a nonparametric bootstrap with
//! full refits. Both report the per-component median, standard deviation and
//! the 2.5 and 97.5 percentiles across draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decompose::{decompose, Components, COMPONENT_NAMES};
use crate::error::{Error, Result};
use crate::models::{fit_models, FittedModels, Link};
use crate::rng::stream_rng;

/// Fraction of failed bootstrap refits above which the run is abandoned.
const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    NormalDraws,
    Bootstrap,
}

/// Summary of one component over draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentInterval {
    pub name: String,
    /// Median across draws.
    pub point: f64,
    pub sd: f64,
    /// 2.5 percentile.
    pub lower: f64,
    /// 97.5 percentile.
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub method: IntervalMethod,
    /// One entry per component plus the total, in [`COMPONENT_NAMES`] order.
    pub intervals: Vec<ComponentInterval>,
    pub draws_used: usize,
    pub draws_failed: usize,
}

/// Multivariate normal sampler factored once, sampled many times.
///
/// Uses the Cholesky factor when the covariance is positive definite, else a
/// symmetric eigendecomposition with negative eigenvalues floored at zero.
/// Eigenvalues below `-tol` (relative to the largest magnitude) mean the
/// matrix is not a covariance at all and are an error.
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d * d, got: cov.len() });
        }
        // Symmetrize before factoring; inverse-information matrices carry
        // rounding asymmetry.
        let sym = (cov + cov.transpose()) * 0.5;
        if let Some(chol) = sym.clone().cholesky() {
            return Ok(Self { mean, factor: chol.l() });
        }
        let eig = sym.symmetric_eigen();
        let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let tol = max_abs.max(1.0) * 1e-10;
        let mut min_eig = f64::INFINITY;
        for &v in eig.eigenvalues.iter() {
            min_eig = min_eig.min(v);
        }
        if min_eig < -tol {
            return Err(Error::NonPsdCovariance(min_eig));
        }
        let mut factor = eig.eigenvectors.clone();
        for c in 0..d {
            let s = eig.eigenvalues[c].max(0.0).sqrt();
            for r in 0..d {
                factor[(r, c)] *= s;
            }
        }
        Ok(Self { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.mean.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.factor * z
    }
}

fn flatten_coef(coef: &DMatrix<f64>) -> DVector<f64> {
    // level-major, matching the multinomial vcov layout
    let (rows, cols) = coef.shape();
    DVector::from_iterator(rows * cols, (0..rows * cols).map(|i| coef[(i / cols, i % cols)]))
}

fn unflatten_coef(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, c| v[r * cols + c])
}

/// Draws component vectors by perturbing all three coefficient blocks from
/// their asymptotic normal distributions and recomputing the decomposition on
/// the original dataset. Draw `t` uses stream `t` of `seed`, so results do not
/// depend on the thread count.
pub fn posterior_draws(
    dataset: &Dataset,
    models: &FittedModels,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Components>> {
    if n_draws == 0 {
        return Err(Error::TooFewReplicates(0));
    }
    let outcome_sampler = MvnSampler::new(models.outcome.theta.clone(), &models.outcome.vcov)?;
    let hosp_sampler =
        MvnSampler::new(flatten_coef(&models.hospital.coef), &models.hospital.vcov)?;
    let group_sampler = MvnSampler::new(flatten_coef(&models.group.coef), &models.group.vcov)?;

    let (hr, hc) = models.hospital.coef.shape();
    let (gr, gc) = models.group.coef.shape();

    let draws: Vec<Result<Components>> = crate::map_indexed(n_draws, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let mut m = models.clone();
        m.outcome.theta = outcome_sampler.sample(&mut rng);
        m.hospital.coef = unflatten_coef(&hosp_sampler.sample(&mut rng), hr, hc);
        m.group.coef = unflatten_coef(&group_sampler.sample(&mut rng), gr, gc);
        decompose(dataset, &m)
    });
    draws.into_iter().collect()
}

/// Nonparametric bootstrap: resample rows with replacement, refit all three
/// models, recompute the decomposition. Replicates whose refit fails (lost
/// factor level, separation-driven divergence, rank deficiency) are dropped;
/// more than 10 percent failures abandons the run.
pub fn bootstrap(
    dataset: &Dataset,
    link: Link,
    n_replicates: usize,
    seed: u64,
) -> Result<Vec<Components>> {
    if n_replicates == 0 {
        return Err(Error::TooFewReplicates(0));
    }
    let n = dataset.n();
    let results: Vec<Result<Components>> = crate::map_indexed(n_replicates, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let resampled = dataset.resample(&indices)?;
        let models = fit_models(&resampled, link)?;
        decompose(&resampled, &models)
    });

    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(c) => ok.push(c),
            Err(_) => failed += 1,
        }
    }
    if (failed as f64) > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(ok)
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-component medians, standard deviations and percentile intervals.
pub fn summarize(draws: &[Components], method: IntervalMethod) -> Result<UncertaintySummary> {
    let used = draws.len();
    if used < 2 {
        return Err(Error::TooFewReplicates(used));
    }
    let mut intervals = Vec::with_capacity(COMPONENT_NAMES.len());
    for (c, name) in COMPONENT_NAMES.iter().enumerate() {
        let mut values: Vec<f64> = draws.iter().map(|d| d.values()[c]).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let sd = crate::kahan::sample_variance(&values).sqrt();
        intervals.push(ComponentInterval {
            name: (*name).to_string(),
            point: quantile(&values, 0.5),
            sd,
            lower: quantile(&values, 0.025),
            upper: quantile(&values, 0.975),
        });
    }
    Ok(UncertaintySummary { method, intervals, draws_used: used, draws_failed: 0 })
}
