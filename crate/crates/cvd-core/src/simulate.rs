//! Data-generating scenarios and the replication harness.
//!
//! A [`Scenario`] fixes the covariate law and the true coefficients of all
//! three models. Four builtin scenarios pair five or ten hospitals and three
//! groups with a binary or continuous outcome over two covariates, one
//! Bernoulli(0.5) and one standard normal. The true component values come
//! from a super-population pass: a large covariate draw is turned into a
//! discrete law and handed to the brute-force oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{design_width, CategoryMap, Dataset, OutcomeKind};
use crate::decompose::{decompose, Components};
use crate::error::{Error, Result};
use crate::kahan;
use crate::models::{fit_models, FittedModels, GlmFit, Link, MultinomialFit};
use crate::oracles::{brute_force_components, DiscreteLaw, LawPoint};
use crate::rng::{child_seed, stream_rng};

/// Marginal law of one covariate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateSpec {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

/// A complete data-generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub j: usize,
    pub k: usize,
    pub outcome_kind: OutcomeKind,
    pub covariates: Vec<CovariateSpec>,
    /// Group model, (K-1) x (1+p), row for level z+1 over [1, X].
    pub group_coef: Vec<Vec<f64>>,
    /// Hospital model, (J-1) x (1+p+K-1), row for level a+1 over
    /// [1, X, I(Z=2..K)].
    pub hospital_coef: Vec<Vec<f64>>,
    /// Outcome model over the full interaction design, see
    /// [`Dataset::design_row`] for the layout.
    pub outcome_coef: Vec<f64>,
    /// Error standard deviation; used only for a continuous outcome.
    #[serde(default = "default_error_sd")]
    pub error_sd: f64,
}

fn default_error_sd() -> f64 {
    1.0
}

impl Scenario {
    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn link(&self) -> Link {
        match self.outcome_kind {
            OutcomeKind::Binary => Link::Logit,
            OutcomeKind::Continuous => Link::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.j < 2 || self.k < 2 {
            return Err(Error::Invalid("scenario needs J >= 2 and K >= 2".into()));
        }
        if self.group_coef.len() != self.k - 1
            || self.group_coef.iter().any(|r| r.len() != 1 + p)
        {
            return Err(Error::Invalid("group_coef must be (K-1) x (1+p)".into()));
        }
        if self.hospital_coef.len() != self.j - 1
            || self.hospital_coef.iter().any(|r| r.len() != 1 + p + self.k - 1)
        {
            return Err(Error::Invalid("hospital_coef must be (J-1) x (1+p+K-1)".into()));
        }
        let q = design_width(self.j, self.k, p);
        if self.outcome_coef.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: self.outcome_coef.len() });
        }
        if self.outcome_kind == OutcomeKind::Continuous && !(self.error_sd > 0.0) {
            return Err(Error::Invalid("error_sd must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const BUILTIN_SCENARIOS: [&str; 4] =
    ["j5-binary", "j10-binary", "j5-continuous", "j10-continuous"];

/// Group model shared by every builtin scenario: rows z=2,3 over [1, X1, X2].
const GROUP_COEF: [[f64; 3]; 2] = [[0.2, 0.1, 0.2], [0.2, 0.2, 0.3]];

/// Hospital model, five hospitals: rows a=2..=5 over [1, X1, X2, Z2, Z3].
const HOSPITAL_COEF_J5: [[f64; 5]; 4] = [
    [0.1, 0.1, 0.2, 1.0, 0.1],
    [-0.2, 0.5, 0.5, 0.2, 0.5],
    [0.1, 0.1, 0.2, 0.3, 1.2],
    [0.1, 0.5, 0.5, -0.4, 0.7],
];

/// Hospital model, ten hospitals: the five-hospital rows repeated, plus one.
const HOSPITAL_COEF_J10_EXTRA: [f64; 5] = [0.2, 0.3, 0.3, 0.6, 0.6];

const BETA: [f64; 3] = [-0.5, 1.4, -1.4];
const THETA_Z: [f64; 2] = [-0.5, 1.0];

const GAMMA_J5: [f64; 4] = [1.5, 0.5, 1.6, 0.0];
const INT_Z2_J5: [f64; 4] = [1.0, 1.2, -0.2, -0.5];
const INT_Z3_J5: [f64; 4] = [-1.4, 1.5, -1.6, -0.3];

const GAMMA_J10: [f64; 9] = [1.5, 0.5, 1.6, 0.0, 1.3, 0.0, 1.4, 0.0, 1.2];
const INT_Z2_J10: [f64; 9] = [1.0, 1.2, -0.2, -0.5, 1.2, 1.3, -0.5, -0.2, -0.2];
const INT_Z3_J10: [f64; 9] = [-1.4, 1.5, -1.6, -0.3, -1.4, 1.3, -1.5, 1.6, -0.4];

fn assemble_outcome_coef(gamma: &[f64], int_z2: &[f64], int_z3: &[f64]) -> Vec<f64> {
    let mut theta = BETA.to_vec();
    theta.extend_from_slice(gamma);
    theta.extend_from_slice(&THETA_Z);
    theta.extend_from_slice(int_z2);
    theta.extend_from_slice(int_z3);
    theta
}

fn hospital_coef(j: usize) -> Vec<Vec<f64>> {
    match j {
        5 => HOSPITAL_COEF_J5.iter().map(|r| r.to_vec()).collect(),
        10 => {
            let mut rows: Vec<Vec<f64>> =
                HOSPITAL_COEF_J5.iter().map(|r| r.to_vec()).collect();
            rows.extend(HOSPITAL_COEF_J5.iter().map(|r| r.to_vec()));
            rows.push(HOSPITAL_COEF_J10_EXTRA.to_vec());
            rows
        }
        _ => unreachable!(),
    }
}

/// Returns a builtin scenario by name, see [`BUILTIN_SCENARIOS`].
pub fn builtin(name: &str) -> Result<Scenario> {
    let (j, kind) = match name {
        "j5-binary" => (5, OutcomeKind::Binary),
        "j10-binary" => (10, OutcomeKind::Binary),
        "j5-continuous" => (5, OutcomeKind::Continuous),
        "j10-continuous" => (10, OutcomeKind::Continuous),
        _ => {
            return Err(Error::Invalid(format!(
                "unknown scenario `{name}`; builtins are {}",
                BUILTIN_SCENARIOS.join(", ")
            )))
        }
    };
    let (gamma, i2, i3): (&[f64], &[f64], &[f64]) = if j == 5 {
        (&GAMMA_J5, &INT_Z2_J5, &INT_Z3_J5)
    } else {
        (&GAMMA_J10, &INT_Z2_J10, &INT_Z3_J10)
    };
    let scenario = Scenario {
        name: name.to_string(),
        j,
        k: 3,
        outcome_kind: kind,
        covariates: vec![
            CovariateSpec::Bernoulli { p: 0.5 },
            CovariateSpec::Normal { mean: 0.0, sd: 1.0 },
        ],
        group_coef: GROUP_COEF.iter().map(|r| r.to_vec()).collect(),
        hospital_coef: hospital_coef(j),
        outcome_coef: assemble_outcome_coef(gamma, i2, i3),
        error_sd: 1.0,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Offsets of the hospital-dummy, group-dummy and interaction blocks in the
/// outcome coefficient vector.
fn outcome_blocks(s: &Scenario) -> (usize, usize, usize) {
    let a_off = 1 + s.p();
    let z_off = a_off + (s.j - 1);
    let int_off = z_off + (s.k - 1);
    (a_off, z_off, int_off)
}

/// Variant with no hospital influence on the outcome: the hospital dummies
/// and all interactions are zeroed, so care quality is identical everywhere.
pub fn zero_hospital_outcome_terms(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    let (a_off, z_off, int_off) = outcome_blocks(&s);
    for c in a_off..z_off {
        s.outcome_coef[c] = 0.0;
    }
    for c in int_off..s.outcome_coef.len() {
        s.outcome_coef[c] = 0.0;
    }
    s.name = format!("{}-no-hospital-effect", base.name);
    s
}

/// Variant with no group influence on the outcome: the group dummies and all
/// interactions are zeroed. Group can still act on the outcome through
/// hospital selection.
pub fn zero_group_outcome_terms(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    let (_, z_off, int_off) = outcome_blocks(&s);
    for c in z_off..int_off {
        s.outcome_coef[c] = 0.0;
    }
    for c in int_off..s.outcome_coef.len() {
        s.outcome_coef[c] = 0.0;
    }
    s.name = format!("{}-no-group-outcome-effect", base.name);
    s
}

/// Variant where hospital assignment ignores group membership: the group
/// columns of the assignment model are zeroed.
pub fn zero_assignment_group_terms(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    let p = s.p();
    for row in s.hospital_coef.iter_mut() {
        for v in row.iter_mut().skip(1 + p) {
            *v = 0.0;
        }
    }
    s.name = format!("{}-assignment-ignores-group", base.name);
    s
}

fn numbered_map(prefix: &str, count: usize) -> CategoryMap {
    CategoryMap { levels: (1..=count).map(|v| format!("{prefix}{v}")).collect() }
}

/// Exact model-implied tables at one covariate value.
///
/// Returns (m, pa, pz, v) in the nested `[a][z]` layout of [`LawPoint`].
fn true_tables(s: &Scenario, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let j = s.j;
    let k = s.k;
    let p = s.p();
    let link = s.link();

    // group probabilities
    let mut pz = vec![0.0; k];
    for (l, row) in s.group_coef.iter().enumerate() {
        let mut e = row[0];
        for (c, &xv) in x.iter().enumerate() {
            e += row[1 + c] * xv;
        }
        pz[l + 1] = e;
    }
    crate::models::softmax(&mut pz);

    // hospital probabilities per z
    let mut pa = vec![vec![0.0; k]; j];
    let mut eta = vec![0.0; j];
    for z in 1..=k {
        eta[0] = 0.0;
        for (l, row) in s.hospital_coef.iter().enumerate() {
            let mut e = row[0];
            for (c, &xv) in x.iter().enumerate() {
                e += row[1 + c] * xv;
            }
            if z > 1 {
                e += row[1 + p + z - 2];
            }
            eta[l + 1] = e;
        }
        crate::models::softmax(&mut eta);
        for a in 0..j {
            pa[a][z - 1] = eta[a];
        }
    }

    // outcome means and conditional variances
    let theta = &s.outcome_coef;
    let mut base = theta[0];
    for (c, &xv) in x.iter().enumerate() {
        base += theta[1 + c] * xv;
    }
    let a_off = 1 + p;
    let z_off = a_off + (j - 1);
    let int_off = z_off + (k - 1);
    let mut m = vec![vec![0.0; k]; j];
    let mut v = vec![vec![0.0; k]; j];
    for a in 1..=j {
        for z in 1..=k {
            let mut e = base;
            if a > 1 {
                e += theta[a_off + a - 2];
            }
            if z > 1 {
                e += theta[z_off + z - 2];
            }
            if a > 1 && z > 1 {
                e += theta[int_off + (z - 2) * (j - 1) + (a - 2)];
            }
            let mean = link.inverse(e);
            m[a - 1][z - 1] = mean;
            v[a - 1][z - 1] = match s.outcome_kind {
                OutcomeKind::Binary => mean * (1.0 - mean),
                OutcomeKind::Continuous => s.error_sd * s.error_sd,
            };
        }
    }
    (m, pa, pz, v)
}

fn sample_category<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    probs.len()
}

/// Draws a dataset of `n` rows from the scenario, deterministically in `seed`.
pub fn generate(s: &Scenario, n: usize, seed: u64) -> Result<Dataset> {
    s.validate()?;
    if n == 0 {
        return Err(Error::Invalid("cannot generate an empty dataset".into()));
    }
    let p = s.p();
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;

    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * p);
    let mut xi = vec![0.0; p];
    for _ in 0..n {
        for (c, spec) in s.covariates.iter().enumerate() {
            xi[c] = match *spec {
                CovariateSpec::Bernoulli { p } => {
                    if rng.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
                CovariateSpec::Normal { mean, sd } => mean + sd * normal.sample(&mut rng),
            };
        }
        let (m, pa, pz, _) = true_tables(s, &xi);
        let zi = sample_category(&mut rng, &pz);
        let pa_col: Vec<f64> = (0..s.j).map(|ai| pa[ai][zi - 1]).collect();
        let ai = sample_category(&mut rng, &pa_col);
        let mean = m[ai - 1][zi - 1];
        let yi = match s.outcome_kind {
            OutcomeKind::Binary => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            OutcomeKind::Continuous => mean + s.error_sd * normal.sample(&mut rng),
        };
        y.push(yi);
        a.push(ai);
        z.push(zi);
        x.extend_from_slice(&xi);
    }

    let covariate_names = (1..=p).map(|c| format!("x{c}")).collect();
    Dataset::from_parts(
        y,
        a,
        z,
        x,
        p,
        s.outcome_kind,
        numbered_map("H", s.j),
        numbered_map("G", s.k),
        covariate_names,
        "y".to_string(),
    )
}

/// Packs the true scenario coefficients into the fitted-model containers, with
/// zero coefficient covariances. Decomposing a dataset under these models
/// gives the population plug-in values on that covariate sample.
pub fn true_models(s: &Scenario) -> Result<FittedModels> {
    s.validate()?;
    let p = s.p();
    let q = design_width(s.j, s.k, p);
    let outcome = GlmFit {
        theta: DVector::from_column_slice(&s.outcome_coef),
        vcov: DMatrix::zeros(q, q),
        link: s.link(),
        converged: true,
        iterations: 0,
        log_likelihood: 0.0,
        residual_sd: match s.outcome_kind {
            OutcomeKind::Binary => None,
            OutcomeKind::Continuous => Some(s.error_sd),
        },
        separation: false,
        coefficient_names: Vec::new(),
    };
    let hq = 1 + p + s.k - 1;
    let hospital = MultinomialFit {
        coef: DMatrix::from_fn(s.j - 1, hq, |r, c| s.hospital_coef[r][c]),
        vcov: DMatrix::zeros((s.j - 1) * hq, (s.j - 1) * hq),
        response_levels: s.j,
        converged: true,
        iterations: 0,
        log_likelihood: 0.0,
        separation: false,
        coefficient_names: Vec::new(),
    };
    let gq = 1 + p;
    let group = MultinomialFit {
        coef: DMatrix::from_fn(s.k - 1, gq, |r, c| s.group_coef[r][c]),
        vcov: DMatrix::zeros((s.k - 1) * gq, (s.k - 1) * gq),
        response_levels: s.k,
        converged: true,
        iterations: 0,
        log_likelihood: 0.0,
        separation: false,
        coefficient_names: Vec::new(),
    };
    Ok(FittedModels { outcome, hospital, group, j: s.j, k: s.k, p })
}

/// Discrete law of a covariate draw of size `n` under the scenario, with
/// equal point masses.
pub fn empirical_law(s: &Scenario, n: usize, seed: u64) -> Result<DiscreteLaw> {
    s.validate()?;
    let p = s.p();
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut points = Vec::with_capacity(n);
    let w = 1.0 / n as f64;
    let mut xi = vec![0.0; p];
    for _ in 0..n {
        for (c, spec) in s.covariates.iter().enumerate() {
            xi[c] = match *spec {
                CovariateSpec::Bernoulli { p } => {
                    if rng.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
                CovariateSpec::Normal { mean, sd } => mean + sd * normal.sample(&mut rng),
            };
        }
        let (m, pa, pz, v) = true_tables(s, &xi);
        points.push(LawPoint { prob: w, x: xi.clone(), pz, pa, m, v });
    }
    Ok(DiscreteLaw { j: s.j, k: s.k, points })
}

/// True component values with Monte Carlo standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthReport {
    pub components: Components,
    /// Monte Carlo standard error of each entry of `components.values()`.
    pub mc_se: [f64; 9],
    pub superpop_n: usize,
}

/// Approximates the true components by a super-population covariate draw of
/// size `superpop_n` pushed through the exact brute-force evaluation.
pub fn true_components(s: &Scenario, superpop_n: usize, seed: u64) -> Result<TruthReport> {
    let law = empirical_law(s, superpop_n, seed)?;
    let report = brute_force_components(&law)?;
    let n = superpop_n as f64;

    // Per-point contributions; the spread over points gives the MC error of
    // each mean. The case-mix and total use centered squared deviations.
    let s_bar = report
        .point_terms
        .iter()
        .map(|t| t.system_mean)
        .sum::<f64>()
        / n;
    let mut mc_se = [0.0; 9];
    let per_point: Vec<[f64; 9]> = report
        .point_terms
        .iter()
        .map(|t| {
            let dev = (t.system_mean - s_bar) * (t.system_mean - s_bar);
            [
                t.w1,
                t.w2,
                t.w3,
                t.w4,
                t.w5,
                t.w6,
                dev,
                t.w8,
                dev + t.within_variance,
            ]
        })
        .collect();
    for c in 0..9 {
        let vals: Vec<f64> = per_point.iter().map(|row| row[c]).collect();
        mc_se[c] = (kahan::sample_variance(&vals) / n).sqrt();
    }

    Ok(TruthReport { components: report.components, mc_se, superpop_n })
}

/// One simulated estimate per replicate plus failure bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: String,
    pub n: usize,
    pub replicates: Vec<Components>,
    /// Normal-approximation standard error of each component, one row per
    /// replicate; present when the run asked for draw-based errors.
    #[serde(default)]
    pub draw_se: Option<Vec<[f64; 9]>>,
    pub failed: usize,
}

impl ReplicationReport {
    /// Mean of each component across replicates.
    pub fn means(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (c, v) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = self.replicates.iter().map(|r| r.values()[c]).collect();
            *v = kahan::mean(&vals);
        }
        out
    }

    /// Monte Carlo standard deviation of each component across replicates.
    pub fn sds(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (c, v) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = self.replicates.iter().map(|r| r.values()[c]).collect();
            *v = kahan::sample_variance(&vals).sqrt();
        }
        out
    }

    /// Median of each component across replicates.
    pub fn medians(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (c, v) in out.iter_mut().enumerate() {
            let mut vals: Vec<f64> = self.replicates.iter().map(|r| r.values()[c]).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            let n = vals.len();
            *v = if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            };
        }
        out
    }

    /// Mean of the per-replicate draw-based standard errors, if present.
    pub fn mean_draw_se(&self) -> Option<[f64; 9]> {
        let se = self.draw_se.as_ref()?;
        let mut out = [0.0; 9];
        for (c, v) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = se.iter().map(|row| row[c]).collect();
            *v = kahan::mean(&vals);
        }
        Some(out)
    }
}

/// Runs `reps` independent generate-fit-decompose replicates at sample size
/// `n`. Replicate `r` derives its own seed from the master seed, so runs are
/// reproducible replicate by replicate and independent of thread count.
/// Replicates whose fit fails are dropped; more than 10 percent failures is
/// an error.
pub fn run_replicates(s: &Scenario, n: usize, reps: usize, seed: u64) -> Result<ReplicationReport> {
    run_replicates_with_draws(s, n, reps, seed, 0)
}

/// Like [`run_replicates`], additionally attaching a normal-approximation
/// standard error per component per replicate from `draws` coefficient draws
/// (0 disables the extra pass).
pub fn run_replicates_with_draws(
    s: &Scenario,
    n: usize,
    reps: usize,
    seed: u64,
    draws: usize,
) -> Result<ReplicationReport> {
    s.validate()?;
    if reps == 0 {
        return Err(Error::TooFewReplicates(0));
    }
    let link = s.link();
    let results: Vec<Result<(Components, Option<[f64; 9]>)>> = crate::map_indexed(reps, |r| {
        let rep_seed = child_seed(seed, r as u64);
        let dataset = generate(s, n, rep_seed)?;
        let models = fit_models(&dataset, link)?;
        let estimate = decompose(&dataset, &models)?;
        let se = if draws > 0 {
            let draw_components = crate::uncertainty::posterior_draws(
                &dataset,
                &models,
                draws,
                child_seed(rep_seed, 1),
            )?;
            let mut se = [0.0; 9];
            for (c, v) in se.iter_mut().enumerate() {
                let vals: Vec<f64> = draw_components.iter().map(|d| d.values()[c]).collect();
                *v = kahan::sample_variance(&vals).sqrt();
            }
            Some(se)
        } else {
            None
        };
        Ok((estimate, se))
    });
    let total = results.len();
    let mut replicates = Vec::with_capacity(total);
    let mut draw_se = Vec::new();
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok((c, se)) => {
                replicates.push(c);
                if let Some(se) = se {
                    draw_se.push(se);
                }
            }
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(ReplicationReport {
        scenario: s.name.clone(),
        n,
        replicates,
        draw_se: if draws > 0 { Some(draw_se) } else { None },
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtin_dimensions_are_consistent() {
        for name in BUILTIN_SCENARIOS {
            let s = builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(s.k, 3);
            assert_eq!(s.outcome_coef.len(), design_width(s.j, 3, 2));
        }
    }

    #[test]
    fn builtin_coefficient_spot_checks() {
        let s5 = builtin("j5-binary").unwrap();
        assert_eq!(s5.hospital_coef[0], vec![0.1, 0.1, 0.2, 1.0, 0.1]);
        assert_eq!(s5.hospital_coef[3], vec![0.1, 0.5, 0.5, -0.4, 0.7]);
        assert_eq!(s5.group_coef[1], vec![0.2, 0.2, 0.3]);
        // theta layout: [b0, b1, b2, gamma(4), thetaZ(2), z2 ints(4), z3 ints(4)]
        assert_eq!(s5.outcome_coef[0], -0.5);
        assert_eq!(&s5.outcome_coef[3..7], &[1.5, 0.5, 1.6, 0.0]);
        assert_eq!(&s5.outcome_coef[7..9], &[-0.5, 1.0]);
        assert_eq!(&s5.outcome_coef[9..13], &[1.0, 1.2, -0.2, -0.5]);
        assert_eq!(&s5.outcome_coef[13..17], &[-1.4, 1.5, -1.6, -0.3]);

        let s10 = builtin("j10-continuous").unwrap();
        assert_eq!(s10.hospital_coef.len(), 9);
        assert_eq!(s10.hospital_coef[4], s10.hospital_coef[0]);
        assert_eq!(s10.hospital_coef[8], vec![0.2, 0.3, 0.3, 0.6, 0.6]);
        assert_eq!(&s10.outcome_coef[3..12], &[1.5, 0.5, 1.6, 0.0, 1.3, 0.0, 1.4, 0.0, 1.2]);
        assert_eq!(
            &s10.outcome_coef[14..23],
            &[1.0, 1.2, -0.2, -0.5, 1.2, 1.3, -0.5, -0.2, -0.2]
        );
        assert_eq!(
            &s10.outcome_coef[23..32],
            &[-1.4, 1.5, -1.6, -0.3, -1.4, 1.3, -1.5, 1.6, -0.4]
        );
    }

    #[test]
    fn generate_is_deterministic_in_seed() {
        let s = builtin("j5-binary").unwrap();
        let d1 = generate(&s, 500, 11).unwrap();
        let d2 = generate(&s, 500, 11).unwrap();
        assert_eq!(d1, d2);
        let d3 = generate(&s, 500, 12).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn generated_marginals_match_the_law() {
        let s = builtin("j5-binary").unwrap();
        let n = 20_000;
        let d = generate(&s, n, 42).unwrap();
        // X1 frequency
        let x1_mean: f64 = (0..n).map(|i| d.x_row(i)[0]).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(x1_mean, 0.5, epsilon = 0.02);
        // X2 mean and variance
        let x2: Vec<f64> = (0..n).map(|i| d.x_row(i)[1]).collect();
        assert_abs_diff_eq!(kahan::mean(&x2), 0.0, epsilon = 0.03);
        assert_abs_diff_eq!(kahan::sample_variance(&x2), 1.0, epsilon = 0.05);
        // empirical Z distribution vs the model-implied average
        let mut expected = [0.0; 3];
        let mut observed = [0.0; 3];
        for i in 0..n {
            let (_, _, pz, _) = true_tables(&s, d.x_row(i));
            for z in 0..3 {
                expected[z] += pz[z];
            }
            observed[d.z[i] - 1] += 1.0;
        }
        for z in 0..3 {
            assert_abs_diff_eq!(observed[z] / n as f64, expected[z] / n as f64, epsilon = 0.02);
        }
    }

    #[test]
    fn truth_satisfies_the_sum_identity() {
        for name in ["j5-binary", "j5-continuous"] {
            let s = builtin(name).unwrap();
            let t = true_components(&s, 2_000, 9).unwrap();
            let c = &t.components;
            assert_abs_diff_eq!(c.sum_of_components(), c.total, epsilon = 1e-12);
            assert!(c.values().iter().all(|v| v.is_finite()));
            assert!(t.mc_se.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn decompose_under_true_models_matches_brute_force() {
        // same covariate draw through both routes; only the case-mix
        // denominator differs
        let s = builtin("j5-binary").unwrap();
        let n = 400;
        let seed = 5;
        let d = generate(&s, n, seed).unwrap();
        let models = true_models(&s).unwrap();
        let est = decompose(&d, &models).unwrap();

        let mut law = empirical_law(&s, n, seed).unwrap();
        // replace the law's own draw with the dataset's covariates
        for (pt, i) in law.points.iter_mut().zip(0..n) {
            let x = d.x_row(i);
            let (m, pa, pz, v) = true_tables(&s, x);
            pt.x = x.to_vec();
            pt.m = m;
            pt.pa = pa;
            pt.pz = pz;
            pt.v = v;
        }
        let brute = brute_force_components(&law).unwrap().with_sample_case_mix(n);
        for (a, b) in est.values().iter().zip(brute.values().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_replication_run_is_reproducible() {
        let s = builtin("j5-binary").unwrap();
        let r1 = run_replicates(&s, 400, 4, 21).unwrap();
        let r2 = run_replicates(&s, 400, 4, 21).unwrap();
        assert_eq!(r1.failed, 0);
        assert_eq!(r1.replicates.len(), 4);
        for (a, b) in r1.replicates.iter().zip(&r2.replicates) {
            assert_eq!(a.values(), b.values());
        }
    }

    fn all_zero_scenario(kind: OutcomeKind) -> Scenario {
        let mut s = builtin(match kind {
            OutcomeKind::Binary => "j5-binary",
            OutcomeKind::Continuous => "j5-continuous",
        })
        .unwrap();
        for row in s.group_coef.iter_mut().chain(s.hospital_coef.iter_mut()) {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
        for v in s.outcome_coef.iter_mut() {
            *v = 0.0;
        }
        s
    }

    #[test]
    fn zero_coefficients_give_uniform_assignment() {
        let s = all_zero_scenario(OutcomeKind::Binary);
        let n = 30_000;
        let d = generate(&s, n, 4).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        for z in 1..=3 {
            let f = d.z.iter().filter(|&&v| v == z).count() as f64 / n as f64;
            assert_abs_diff_eq!(f, 1.0 / 3.0, epsilon = tol);
        }
        for a in 1..=5 {
            let f = d.a.iter().filter(|&&v| v == a).count() as f64 / n as f64;
            assert_abs_diff_eq!(f, 0.2, epsilon = tol);
        }
    }

    #[test]
    fn zero_coefficient_truth_is_pure_residual() {
        let t = true_components(&all_zero_scenario(OutcomeKind::Binary), 2_000, 3).unwrap();
        let c = &t.components;
        for w in [c.w1, c.w2, c.w3, c.w4, c.w5, c.w6, c.w7] {
            assert_abs_diff_eq!(w, 0.0, epsilon = 1e-13);
        }
        // constant p = 0.5 Bernoulli
        assert_abs_diff_eq!(c.w8, 0.25, epsilon = 1e-13);
        assert_abs_diff_eq!(c.total, 0.25, epsilon = 1e-13);
    }

    #[test]
    fn continuous_truth_has_unit_residual() {
        let s = builtin("j5-continuous").unwrap();
        let t = true_components(&s, 2_000, 8).unwrap();
        assert_abs_diff_eq!(t.components.w8, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn group_probability_closed_form_at_zero_covariates() {
        // both non-reference linear predictors are 0.2 at x = 0
        let s = builtin("j5-binary").unwrap();
        let (_, _, pz, _) = true_tables(&s, &[0.0, 0.0]);
        let e = 0.2_f64.exp();
        assert_abs_diff_eq!(pz[1], e / (1.0 + 2.0 * e), epsilon = 1e-14);
        let n = 1_000_000;
        let d = generate(&s, n, 77).unwrap();
        let mut at_x1_zero = 0usize;
        let mut z2 = 0usize;
        for i in 0..n {
            let x = d.x_row(i);
            // condition on X1 = 0 and X2 near 0 so the softmax is near its
            // closed form at the origin
            if x[0] == 0.0 && x[1].abs() < 0.05 {
                at_x1_zero += 1;
                if d.z[i] == 2 {
                    z2 += 1;
                }
            }
        }
        assert!(at_x1_zero > 5_000);
        let f = z2 as f64 / at_x1_zero as f64;
        assert_abs_diff_eq!(f, e / (1.0 + 2.0 * e), epsilon = 0.02);
    }

    #[test]
    fn truth_is_stable_across_disjoint_seeds() {
        let s = builtin("j5-binary").unwrap();
        let t1 = true_components(&s, 100_000, 1).unwrap();
        let t2 = true_components(&s, 100_000, 2).unwrap();
        for c in 0..9 {
            let diff = (t1.components.values()[c] - t2.components.values()[c]).abs();
            let se = (t1.mc_se[c].powi(2) + t2.mc_se[c].powi(2)).sqrt();
            assert!(diff < 3.0 * se, "component {c}: diff {diff} vs combined se {se}");
        }
    }

    #[test]
    fn draw_se_rows_have_report_shape() {
        let s = builtin("j5-binary").unwrap();
        let r = run_replicates_with_draws(&s, 400, 3, 55, 25).unwrap();
        let se = r.draw_se.as_ref().unwrap();
        assert_eq!(se.len(), 3);
        assert!(se.iter().all(|row| row.iter().all(|&v| v.is_finite() && v >= 0.0)));
        assert!(r.mean_draw_se().unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = builtin("j10-binary").unwrap();
        let text = s.to_json().unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.outcome_coef, s.outcome_coef);
        assert_eq!(back.j, 10);
    }
}
