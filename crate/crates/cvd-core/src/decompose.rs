//! The eight plug-in variance components.
//!
//! For every row i and every counterfactual cell (a, z), the cell table holds
//! the fitted outcome mean m[a][z], assignment probability pA[a][z] and group
//! probability pZ[z]. Components standardize these predictions over the
//! empirical covariate distribution with 1/n weights; the case-mix component
//! is the n-1 sample variance of the row-level system means, and the total is
//! assembled from the same plug-in quantities so the eight-way sum identity
//! is exact by construction.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::kahan::{self, KahanSum};
use crate::models::FittedModels;

/// The eight variance components and the model-implied total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    /// Group indirect effect.
    pub w1: f64,
    /// Group direct effect.
    pub w2: f64,
    /// Group covariance.
    pub w3: f64,
    /// Main hospital effect.
    pub w4: f64,
    /// Effect modification.
    pub w5: f64,
    /// Differential selection.
    pub w6: f64,
    /// Case-mix.
    pub w7: f64,
    /// Residual.
    pub w8: f64,
    /// Plug-in total (model implied marginal variance).
    pub total: f64,
    /// Raw sample variance of the observed outcome, for diagnostics.
    pub sample_variance_y: Option<f64>,
    pub n_used: usize,
    /// Observed (a, z) cells with no rows; their predictions are parametric
    /// extrapolation.
    #[serde(default)]
    pub empty_cells: Vec<(usize, usize)>,
}

pub const COMPONENT_NAMES: [&str; 9] = [
    "group_indirect",
    "group_direct",
    "group_covariance",
    "main_hospital",
    "effect_modification",
    "differential_selection",
    "case_mix",
    "residual",
    "total",
];

impl Components {
    pub fn values(&self) -> [f64; 9] {
        [
            self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7, self.w8, self.total,
        ]
    }

    /// Component shares of the plug-in total.
    pub fn proportions(&self) -> [f64; 9] {
        let mut out = self.values();
        if self.total != 0.0 {
            for v in out.iter_mut() {
                *v /= self.total;
            }
        }
        out
    }

    pub fn sum_of_components(&self) -> f64 {
        let mut acc = KahanSum::new();
        for v in &self.values()[..8] {
            acc.add(*v);
        }
        acc.total()
    }
}

/// Per-row model predictions over all J x K counterfactual cells.
#[derive(Debug, Clone)]
pub struct RowCells {
    /// m[a][z] = E(Y | A=a, Z=z, X_i), indexed (a-1)*K + (z-1).
    pub m: Vec<f64>,
    /// pA[a][z] = P(A=a | Z=z, X_i), same indexing.
    pub pa: Vec<f64>,
    /// pZ[z] = P(Z=z | X_i).
    pub pz: Vec<f64>,
    /// v[a][z] = V(Y | A=a, Z=z, X_i).
    pub v: Vec<f64>,
}

/// Cell tables for every row of the analysis dataset.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub rows: Vec<RowCells>,
    pub j: usize,
    pub k: usize,
}

/// Materializes all J x K predictions per row, including cells never observed.
///
/// Exploits the fixed regressor layouts (outcome: intercept, X, A dummies,
/// Z dummies, z-outer interactions; hospital: intercept, X, Z dummies;
/// group: intercept, X) so each cell costs O(1) after the per-row bases.
pub fn build_cells(dataset: &Dataset, models: &FittedModels) -> Result<CellTable> {
    let j = models.j;
    let k = models.k;
    let p = models.p;
    if dataset.j != j || dataset.k != k || dataset.p() != p {
        return Err(Error::DimensionMismatch { expected: j * k, got: dataset.j * dataset.k });
    }
    let q_outcome = crate::data::design_width(j, k, p);
    if models.outcome.theta.len() != q_outcome {
        return Err(Error::DimensionMismatch {
            expected: q_outcome,
            got: models.outcome.theta.len(),
        });
    }
    if models.hospital.coef.nrows() != j - 1 || models.hospital.coef.ncols() != 1 + p + (k - 1) {
        return Err(Error::DimensionMismatch {
            expected: (j - 1) * (1 + p + k - 1),
            got: models.hospital.coef.len(),
        });
    }
    if models.group.coef.nrows() != k - 1 || models.group.coef.ncols() != 1 + p {
        return Err(Error::DimensionMismatch {
            expected: (k - 1) * (1 + p),
            got: models.group.coef.len(),
        });
    }

    let outcome_kind = dataset.outcome_kind;
    let residual_var = match outcome_kind {
        OutcomeKind::Binary => 0.0,
        OutcomeKind::Continuous => {
            let sd = models.outcome.residual_sd.unwrap_or(0.0);
            sd * sd
        }
    };

    let rows = crate::map_indexed(dataset.n(), |i| {
        row_cells(dataset.x_row(i), models, residual_var, outcome_kind)
    });
    Ok(CellTable { rows, j, k })
}

fn row_cells(
    x: &[f64],
    models: &FittedModels,
    residual_var: f64,
    outcome_kind: OutcomeKind,
) -> RowCells {
    let j = models.j;
    let k = models.k;
    let p = models.p;
    let theta = &models.outcome.theta;
    let link = models.outcome.link;

    // Outcome: eta(a, z) = base + theta2[a] + theta3[z] + theta4[a, z].
    let mut base = theta[0];
    for (c, &xv) in x.iter().enumerate() {
        base += theta[1 + c] * xv;
    }
    let a_off = 1 + p;
    let z_off = a_off + (j - 1);
    let int_off = z_off + (k - 1);
    let mut m = vec![0.0; j * k];
    let mut v = vec![0.0; j * k];
    for a in 1..=j {
        for z in 1..=k {
            let mut eta = base;
            if a > 1 {
                eta += theta[a_off + a - 2];
            }
            if z > 1 {
                eta += theta[z_off + z - 2];
            }
            if a > 1 && z > 1 {
                eta += theta[int_off + (z - 2) * (j - 1) + (a - 2)];
            }
            let mean = link.inverse(eta);
            m[(a - 1) * k + (z - 1)] = mean;
            v[(a - 1) * k + (z - 1)] = match outcome_kind {
                OutcomeKind::Binary => mean * (1.0 - mean),
                OutcomeKind::Continuous => residual_var,
            };
        }
    }

    // Hospital: for each z, softmax over a of [0, c_2(z,x), ..., c_J(z,x)].
    let hcoef = &models.hospital.coef;
    let mut hbase = vec![0.0; j - 1];
    for (l, hb) in hbase.iter_mut().enumerate() {
        let mut e = hcoef[(l, 0)];
        for (c, &xv) in x.iter().enumerate() {
            e += hcoef[(l, 1 + c)] * xv;
        }
        *hb = e;
    }
    let mut pa = vec![0.0; j * k];
    let mut eta = vec![0.0; j];
    for z in 1..=k {
        eta[0] = 0.0;
        for l in 0..j - 1 {
            let mut e = hbase[l];
            if z > 1 {
                e += hcoef[(l, 1 + p + z - 2)];
            }
            eta[l + 1] = e;
        }
        crate::models::softmax(&mut eta);
        for a in 1..=j {
            pa[(a - 1) * k + (z - 1)] = eta[a - 1];
        }
    }

    // Group: softmax over z of [0, phi_2 . (1, x), ...].
    let gcoef = &models.group.coef;
    let mut pz = vec![0.0; k];
    pz[0] = 0.0;
    for l in 0..k - 1 {
        let mut e = gcoef[(l, 0)];
        for (c, &xv) in x.iter().enumerate() {
            e += gcoef[(l, 1 + c)] * xv;
        }
        pz[l + 1] = e;
    }
    crate::models::softmax(&mut pz);

    RowCells { m, pa, pz, v }
}

/// Per-row contributions to the components.
#[derive(Debug, Clone, Copy, Default)]
pub struct RowTerms {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w8: f64,
    /// mu-hat(X_i): system mean for this row.
    pub system_mean: f64,
    /// V(Y | X_i) assembled from the cell table; feeds the plug-in total.
    pub within_variance: f64,
}

/// Evaluates the per-row estimator terms from the cell table.
pub fn row_terms(cells: &RowCells, j: usize, k: usize) -> RowTerms {
    let m = &cells.m;
    let pa = &cells.pa;
    let pz = &cells.pz;
    let idx = |a: usize, z: usize| (a - 1) * k + (z - 1);

    // mu[z][z*] = sum_a m[a][z] pA[a][z*]
    let mut mu = vec![0.0; k * k];
    for z in 1..=k {
        for zs in 1..=k {
            let mut s = 0.0;
            for a in 1..=j {
                s += m[idx(a, z)] * pa[idx(a, zs)];
            }
            mu[(z - 1) * k + (zs - 1)] = s;
        }
    }
    let mu_diag = |z: usize| mu[(z - 1) * k + (z - 1)];
    // mu(z, .) and mu(., .)
    let mut mu_dot = vec![0.0; k];
    let mut mu_dotdot = 0.0;
    for z in 1..=k {
        let mut s = 0.0;
        for zs in 1..=k {
            s += mu[(z - 1) * k + (zs - 1)] * pz[zs - 1];
        }
        mu_dot[z - 1] = s;
        mu_dotdot += mu_diag(z) * pz[z - 1];
    }

    let mut t = RowTerms::default();

    for z in 1..=k {
        let d_ind = mu_diag(z) - mu_dot[z - 1];
        let d_dir = mu_dot[z - 1] - mu_dotdot;
        let w = pz[z - 1];
        t.w1 += d_ind * d_ind * w;
        t.w2 += d_dir * d_dir * w;
        t.w3 += 2.0 * d_ind * d_dir * w;
    }

    // tau_a(z) = m[a][z] - mu(z, z)
    for a in 1..=j {
        let mut tau_mean = 0.0; // E_Z tau_a
        let mut tau_sq_mean = 0.0; // E_Z tau_a^2
        let mut pa_mean = 0.0; // E_Z pA[a][Z]
        let mut tau_sq_pa = 0.0; // E_Z tau_a^2 pA[a][Z]
        for z in 1..=k {
            let tau = m[idx(a, z)] - mu_diag(z);
            let w = pz[z - 1];
            tau_mean += tau * w;
            tau_sq_mean += tau * tau * w;
            pa_mean += pa[idx(a, z)] * w;
            tau_sq_pa += tau * tau * pa[idx(a, z)] * w;
        }
        let tau_var = tau_sq_mean - tau_mean * tau_mean;
        t.w4 += tau_mean * tau_mean * pa_mean;
        t.w5 += tau_var * pa_mean;
        t.w6 += tau_sq_pa - tau_sq_mean * pa_mean;
    }

    // residual and within-X variance
    let mut within = 0.0;
    for z in 1..=k {
        let wz = pz[z - 1];
        let mut res_z = 0.0;
        let mut var_z = 0.0;
        for a in 1..=j {
            let w = pa[idx(a, z)];
            res_z += cells.v[idx(a, z)] * w;
            let d = m[idx(a, z)] - mu_dotdot;
            var_z += (d * d + cells.v[idx(a, z)]) * w;
        }
        t.w8 += res_z * wz;
        within += var_z * wz;
    }
    t.system_mean = mu_dotdot;
    t.within_variance = within;
    t
}

macro_rules! component_mean {
    ($name:ident, $field:ident, $doc:expr) => {
        #[doc = $doc]
        pub fn $name(cells: &CellTable) -> f64 {
            let mut acc = KahanSum::new();
            for row in &cells.rows {
                acc.add(row_terms(row, cells.j, cells.k).$field);
            }
            acc.total() / cells.rows.len() as f64
        }
    };
}

component_mean!(component_group_indirect, w1, "Component 1: group indirect effect.");
component_mean!(component_group_direct, w2, "Component 2: group direct effect.");
component_mean!(component_group_covariance, w3, "Component 3: group covariance.");
component_mean!(component_main_hospital, w4, "Component 4: main hospital effect.");
component_mean!(component_effect_modification, w5, "Component 5: effect modification.");
component_mean!(component_differential_selection, w6, "Component 6: differential selection.");
component_mean!(component_residual, w8, "Component 8: residual variance.");

/// Component 7: case-mix, the n-1 sample variance of the row system means.
pub fn component_case_mix(cells: &CellTable) -> f64 {
    let means: Vec<f64> = cells
        .rows
        .iter()
        .map(|row| row_terms(row, cells.j, cells.k).system_mean)
        .collect();
    kahan::sample_variance(&means)
}

/// Full decomposition of a dataset under fitted models.
pub fn decompose(dataset: &Dataset, models: &FittedModels) -> Result<Components> {
    let cells = build_cells(dataset, models)?;
    Ok(decompose_cells(&cells, dataset))
}

/// Sequential variant regardless of the `parallel` feature; used by the bench
/// suite to compare against the data-parallel path.
pub fn decompose_sequential(dataset: &Dataset, models: &FittedModels) -> Result<Components> {
    // build_cells is the parallel part; replicate it serially.
    let j = models.j;
    let k = models.k;
    let residual_var = match dataset.outcome_kind {
        OutcomeKind::Binary => 0.0,
        OutcomeKind::Continuous => {
            let sd = models.outcome.residual_sd.unwrap_or(0.0);
            sd * sd
        }
    };
    let rows: Vec<RowCells> = (0..dataset.n())
        .map(|i| row_cells(dataset.x_row(i), models, residual_var, dataset.outcome_kind))
        .collect();
    let cells = CellTable { rows, j, k };
    Ok(decompose_cells(&cells, dataset))
}

fn decompose_cells(cells: &CellTable, dataset: &Dataset) -> Components {
    let n = cells.rows.len();
    let terms: Vec<RowTerms> = cells
        .rows
        .iter()
        .map(|row| row_terms(row, cells.j, cells.k))
        .collect();

    let mut sums = [KahanSum::new(); 7];
    let mut within = KahanSum::new();
    for t in &terms {
        sums[0].add(t.w1);
        sums[1].add(t.w2);
        sums[2].add(t.w3);
        sums[3].add(t.w4);
        sums[4].add(t.w5);
        sums[5].add(t.w6);
        sums[6].add(t.w8);
        within.add(t.within_variance);
    }
    let means: Vec<f64> = terms.iter().map(|t| t.system_mean).collect();
    let w7 = kahan::sample_variance(&means);
    let nf = n as f64;

    Components {
        w1: sums[0].total() / nf,
        w2: sums[1].total() / nf,
        w3: sums[2].total() / nf,
        w4: sums[3].total() / nf,
        w5: sums[4].total() / nf,
        w6: sums[5].total() / nf,
        w7,
        w8: sums[6].total() / nf,
        total: w7 + within.total() / nf,
        sample_variance_y: Some(kahan::sample_variance(&dataset.y)),
        n_used: n,
        empty_cells: dataset.empty_cells(),
    }
}

/// Plug-in value of E_X V_{Z|X}[mu(Z, X)]; equals w1+w2+w3.
pub fn group_variance_term(cells: &CellTable) -> f64 {
    let mut acc = KahanSum::new();
    for row in &cells.rows {
        // V_{Z|X}[mu(Z,X)] from the per-row table directly
        let k = cells.k;
        let idx = |a: usize, z: usize| (a - 1) * k + (z - 1);
        let mut mu_diag = vec![0.0; k];
        for z in 1..=k {
            let mut s = 0.0;
            for a in 1..=cells.j {
                s += row.m[idx(a, z)] * row.pa[idx(a, z)];
            }
            mu_diag[z - 1] = s;
        }
        let mean: f64 = (0..k).map(|z| mu_diag[z] * row.pz[z]).sum();
        let var: f64 = (0..k)
            .map(|z| (mu_diag[z] - mean) * (mu_diag[z] - mean) * row.pz[z])
            .sum();
        acc.add(var);
    }
    acc.total() / cells.rows.len() as f64
}

/// Plug-in value of E_X E_{Z|X} V_{A|Z,X}[m]; equals w4+w5+w6.
pub fn hospital_variance_term(cells: &CellTable) -> f64 {
    let mut acc = KahanSum::new();
    let k = cells.k;
    let idx = |a: usize, z: usize| (a - 1) * k + (z - 1);
    for row in &cells.rows {
        let mut total = 0.0;
        for z in 1..=k {
            let mut mean = 0.0;
            for a in 1..=cells.j {
                mean += row.m[idx(a, z)] * row.pa[idx(a, z)];
            }
            let mut var = 0.0;
            for a in 1..=cells.j {
                let d = row.m[idx(a, z)] - mean;
                var += d * d * row.pa[idx(a, z)];
            }
            total += var * row.pz[z - 1];
        }
        acc.add(total);
    }
    acc.total() / cells.rows.len() as f64
}

/// Z-weighted means of the per-row indirect and direct effects; both are zero
/// under an additive (identity-link, no interaction) outcome model.
pub fn mean_path_effects(cells: &RowCells, j: usize, k: usize) -> (f64, f64) {
    let idx = |a: usize, z: usize| (a - 1) * k + (z - 1);
    let mut mu = vec![0.0; k * k];
    for z in 1..=k {
        for zs in 1..=k {
            let mut s = 0.0;
            for a in 1..=j {
                s += cells.m[idx(a, z)] * cells.pa[idx(a, zs)];
            }
            mu[(z - 1) * k + (zs - 1)] = s;
        }
    }
    let mut mu_dot = vec![0.0; k];
    let mut mu_dotdot = 0.0;
    for z in 1..=k {
        let mut s = 0.0;
        for zs in 1..=k {
            s += mu[(z - 1) * k + (zs - 1)] * cells.pz[zs - 1];
        }
        mu_dot[z - 1] = s;
        mu_dotdot += mu[(z - 1) * k + (z - 1)] * cells.pz[z - 1];
    }
    let mut ind = 0.0;
    let mut dir = 0.0;
    for z in 1..=k {
        ind += (mu[(z - 1) * k + (z - 1)] - mu_dot[z - 1]) * cells.pz[z - 1];
        dir += (mu_dot[z - 1] - mu_dotdot) * cells.pz[z - 1];
    }
    (ind, dir)
}
