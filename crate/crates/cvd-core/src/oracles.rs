//! Independent reference implementations used to validate the estimator:
//! a brute-force enumerator over small discrete laws for any J and K, and
//! closed forms for the dichotomous J=K=2 case.
//!
//! Laws are moment specified (mean and variance tables rather than samples),
//! so oracle outputs are deterministic and exact up to rounding.

use serde::{Deserialize, Serialize};

use crate::decompose::Components;
use crate::error::{Error, Result};
use crate::kahan::KahanSum;

/// One support point of a discrete law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LawPoint {
    /// Probability mass of this covariate value.
    pub prob: f64,
    /// The covariate value itself, kept for dataset construction.
    #[serde(default)]
    pub x: Vec<f64>,
    /// pz[z-1] = P(Z = z | x).
    pub pz: Vec<f64>,
    /// pa[a-1][z-1] = P(A = a | Z = z, x).
    pub pa: Vec<Vec<f64>>,
    /// m[a-1][z-1] = E(Y | A = a, Z = z, x).
    pub m: Vec<Vec<f64>>,
    /// v[a-1][z-1] = V(Y | A = a, Z = z, x).
    pub v: Vec<Vec<f64>>,
}

/// A finite-support data-generating law over (X, Z, A, Y) moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteLaw {
    pub j: usize,
    pub k: usize,
    pub points: Vec<LawPoint>,
}

impl DiscreteLaw {
    pub fn validate(&self) -> Result<()> {
        if self.j < 2 || self.k < 2 {
            return Err(Error::Invalid("law needs J >= 2 and K >= 2".into()));
        }
        let mass: f64 = self.points.iter().map(|pt| pt.prob).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("support probabilities sum to {mass}")));
        }
        for (s, pt) in self.points.iter().enumerate() {
            if pt.prob < 0.0 {
                return Err(Error::Invalid(format!("negative mass at point {s}")));
            }
            if pt.pz.len() != self.k
                || pt.pa.len() != self.j
                || pt.m.len() != self.j
                || pt.v.len() != self.j
            {
                return Err(Error::Invalid(format!("table dimensions wrong at point {s}")));
            }
            let zs: f64 = pt.pz.iter().sum();
            if (zs - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("pz sums to {zs} at point {s}")));
            }
            for z in 0..self.k {
                let asum: f64 = (0..self.j).map(|a| pt.pa[a][z]).sum();
                if (asum - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!(
                        "pa column z={} sums to {asum} at point {s}",
                        z + 1
                    )));
                }
            }
            for a in 0..self.j {
                if pt.pa[a].len() != self.k || pt.m[a].len() != self.k || pt.v[a].len() != self.k {
                    return Err(Error::Invalid(format!("table row lengths wrong at point {s}")));
                }
                if pt.v[a].iter().any(|&v| v < 0.0) {
                    return Err(Error::Invalid(format!("negative variance at point {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let law: DiscreteLaw = serde_json::from_str(text)?;
        law.validate()?;
        Ok(law)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-point values entering the eight components, for Monte Carlo standard
/// errors when the support is a random sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointTerms {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w8: f64,
    /// S(x): the system mean at this support point.
    pub system_mean: f64,
    /// E[(Y - S(x))^2 | x]: within-point variance around the point mean.
    pub within_variance: f64,
}

/// Literal nested-sum evaluation of the component integrands at one point.
pub fn point_terms(pt: &LawPoint, j: usize, k: usize) -> PointTerms {
    // mu(z, z*) = sum_a E(Y | a, z) P(A = a | z*)
    let mu = |z: usize, zs: usize| -> f64 {
        (0..j).map(|a| pt.m[a][z] * pt.pa[a][zs]).sum()
    };
    // mu(z, .) = sum_z* mu(z, z*) P(Z = z*)
    let mu_dot = |z: usize| -> f64 { (0..k).map(|zs| mu(z, zs) * pt.pz[zs]).sum() };
    // mu(., .) = sum_z mu(z, z) P(Z = z)
    let mu_dotdot: f64 = (0..k).map(|z| mu(z, z) * pt.pz[z]).sum();
    // tau_a(z) = E(Y | a, z) - mu(z, z)
    let tau = |a: usize, z: usize| -> f64 { pt.m[a][z] - mu(z, z) };

    let mut t = PointTerms::default();

    for z in 0..k {
        let d_ind = mu(z, z) - mu_dot(z);
        let d_dir = mu_dot(z) - mu_dotdot;
        t.w1 += d_ind * d_ind * pt.pz[z];
        t.w2 += d_dir * d_dir * pt.pz[z];
        t.w3 += 2.0 * d_ind * d_dir * pt.pz[z];
    }

    for a in 0..j {
        let e_tau: f64 = (0..k).map(|z| tau(a, z) * pt.pz[z]).sum();
        let e_pa: f64 = (0..k).map(|z| pt.pa[a][z] * pt.pz[z]).sum();
        // V_Z[tau_a] by the definition of variance
        let var_tau: f64 = (0..k)
            .map(|z| (tau(a, z) - e_tau) * (tau(a, z) - e_tau) * pt.pz[z])
            .sum();
        // Cov_Z(tau_a^2, pA) by the definition of covariance
        let e_tau2: f64 = (0..k).map(|z| tau(a, z) * tau(a, z) * pt.pz[z]).sum();
        let cov: f64 = (0..k)
            .map(|z| (tau(a, z) * tau(a, z) - e_tau2) * (pt.pa[a][z] - e_pa) * pt.pz[z])
            .sum();
        t.w4 += e_tau * e_tau * e_pa;
        t.w5 += var_tau * e_pa;
        t.w6 += cov;
    }

    for z in 0..k {
        for a in 0..j {
            t.w8 += pt.v[a][z] * pt.pa[a][z] * pt.pz[z];
        }
    }

    t.system_mean = mu_dotdot;
    let mut within = 0.0;
    for z in 0..k {
        for a in 0..j {
            let d = pt.m[a][z] - mu_dotdot;
            within += (d * d + pt.v[a][z]) * pt.pa[a][z] * pt.pz[z];
        }
    }
    t.within_variance = within;
    t
}

/// Brute-force components plus the sub-identity terms of the three-way and
/// six-way decompositions.
#[derive(Debug, Clone)]
pub struct BruteForceReport {
    pub components: Components,
    /// E_X V_{Z|X}[mu(Z, X)]: must equal w1 + w2 + w3.
    pub group_variance_term: f64,
    /// E_X E_{Z|X} V_{A|Z,X}[E(Y|A,Z,X)]: must equal w4 + w5 + w6.
    pub hospital_variance_term: f64,
    pub point_terms: Vec<PointTerms>,
}

/// Evaluates every component of the decomposition by exhaustive summation
/// over (x, z, a). The total variance is computed by an independent route:
/// the raw second moment of the joint law minus the squared grand mean.
pub fn brute_force_components(law: &DiscreteLaw) -> Result<BruteForceReport> {
    law.validate()?;
    let j = law.j;
    let k = law.k;
    let terms: Vec<PointTerms> = law.points.iter().map(|pt| point_terms(pt, j, k)).collect();

    let mut acc = [KahanSum::new(); 7];
    let mut mean_acc = KahanSum::new();
    let mut second_moment = KahanSum::new();
    for (pt, t) in law.points.iter().zip(&terms) {
        let w = pt.prob;
        acc[0].add(w * t.w1);
        acc[1].add(w * t.w2);
        acc[2].add(w * t.w3);
        acc[3].add(w * t.w4);
        acc[4].add(w * t.w5);
        acc[5].add(w * t.w6);
        acc[6].add(w * t.w8);
        mean_acc.add(w * t.system_mean);
        // E[Y^2 | x] = sum_{z,a} (m^2 + v) pa pz
        let mut ey2 = 0.0;
        for z in 0..k {
            for a in 0..j {
                ey2 += (pt.m[a][z] * pt.m[a][z] + pt.v[a][z]) * pt.pa[a][z] * pt.pz[z];
            }
        }
        second_moment.add(w * ey2);
    }
    let grand_mean = mean_acc.total();
    let total = second_moment.total() - grand_mean * grand_mean;

    // Case-mix: V_X[S(X)] with exact weights.
    let mut w7 = KahanSum::new();
    for (pt, t) in law.points.iter().zip(&terms) {
        let d = t.system_mean - grand_mean;
        w7.add(pt.prob * d * d);
    }

    // Sub-identity terms by independent summation.
    let mut group_term = KahanSum::new();
    let mut hosp_term = KahanSum::new();
    for pt in &law.points {
        let mu_zz: Vec<f64> = (0..k)
            .map(|z| (0..j).map(|a| pt.m[a][z] * pt.pa[a][z]).sum())
            .collect();
        let mean: f64 = (0..k).map(|z| mu_zz[z] * pt.pz[z]).sum();
        let var: f64 = (0..k)
            .map(|z| (mu_zz[z] - mean) * (mu_zz[z] - mean) * pt.pz[z])
            .sum();
        group_term.add(pt.prob * var);
        let mut h = 0.0;
        for z in 0..k {
            let mut var_a = 0.0;
            for a in 0..j {
                let d = pt.m[a][z] - mu_zz[z];
                var_a += d * d * pt.pa[a][z];
            }
            h += var_a * pt.pz[z];
        }
        hosp_term.add(pt.prob * h);
    }

    let components = Components {
        w1: acc[0].total(),
        w2: acc[1].total(),
        w3: acc[2].total(),
        w4: acc[3].total(),
        w5: acc[4].total(),
        w6: acc[5].total(),
        w7: w7.total(),
        w8: acc[6].total(),
        total,
        sample_variance_y: None,
        n_used: law.points.len(),
        empty_cells: Vec::new(),
    };
    Ok(BruteForceReport {
        components,
        group_variance_term: group_term.total(),
        hospital_variance_term: hosp_term.total(),
        point_terms: terms,
    })
}

impl BruteForceReport {
    /// Rescales the case-mix component (and total) from the population
    /// 1/n form to the n-1 sample-variance form the estimator reports, for
    /// comparisons on an empirical support of `n` equally weighted points.
    pub fn with_sample_case_mix(&self, n: usize) -> Components {
        let f = n as f64 / (n as f64 - 1.0);
        let mut c = self.components.clone();
        let delta = c.w7 * (f - 1.0);
        c.w7 *= f;
        c.total += delta;
        c
    }
}

/// Closed-form components for the dichotomous case (J = K = 2).
///
/// Written in the binary shorthand: xi = P(Z=2 | x), pi(z) = P(A=2 | z, x);
/// law code 1 is the reference level written as 0 in the shorthand.
pub fn dichotomous_components(law: &DiscreteLaw) -> Result<Components> {
    law.validate()?;
    if law.j != 2 || law.k != 2 {
        return Err(Error::UnsupportedDims { j: law.j, k: law.k });
    }

    let mut acc = [KahanSum::new(); 7];
    let mut mean_acc = KahanSum::new();
    let mut s_sq = KahanSum::new();
    let mut second_moment = KahanSum::new();

    for pt in &law.points {
        let w = pt.prob;
        let xi = pt.pz[1];
        let pi = |z: usize| pt.pa[1][z]; // P(A=2 | z)
        let m = |a: usize, z: usize| pt.m[a][z];
        let v = |a: usize, z: usize| pt.v[a][z];

        // mu(z, z*) with the assignment distribution of z*
        let mu = |z: usize, zs: usize| m(0, z) * (1.0 - pi(zs)) + m(1, z) * pi(zs);
        let mu_dot = |z: usize| mu(z, 0) * (1.0 - xi) + mu(z, 1) * xi;
        let mu_dd = mu(0, 0) * (1.0 - xi) + mu(1, 1) * xi;

        // (1) group indirect
        let ind0 = mu(0, 0) - mu_dot(0);
        let ind1 = mu(1, 1) - mu_dot(1);
        acc[0].add(w * (ind0 * ind0 * (1.0 - xi) + ind1 * ind1 * xi));

        // (2) group direct
        let dir0 = mu_dot(0) - mu_dd;
        let dir1 = mu_dot(1) - mu_dd;
        acc[1].add(w * (dir0 * dir0 * (1.0 - xi) + dir1 * dir1 * xi));

        // (3) group covariance: 2 delta_ind delta_dir, weighted
        acc[2].add(w * 2.0 * (ind0 * dir0 * (1.0 - xi) + ind1 * dir1 * xi));

        // tau_a(z) = m(a, z) - mu(z, z)
        let tau = |a: usize, z: usize| m(a, z) - mu(z, z);
        // pi(x) = marginal P(A=2 | x)
        let pi_x = (1.0 - xi) * pi(0) + xi * pi(1);

        // (4) main hospital effect
        let t0 = tau(0, 0) * (1.0 - xi) + tau(0, 1) * xi;
        let t1 = tau(1, 0) * (1.0 - xi) + tau(1, 1) * xi;
        acc[3].add(w * (t0 * t0 * (1.0 - pi_x) + t1 * t1 * pi_x));

        // (5) effect modification: xi(1-xi) [tau_a(1) - tau_a(0)]^2 weights
        let d0 = tau(0, 1) - tau(0, 0);
        let d1 = tau(1, 1) - tau(1, 0);
        acc[4].add(w * (xi * (1.0 - xi) * (d0 * d0 * (1.0 - pi_x) + d1 * d1 * pi_x)));

        // (6) differential selection with the (pi(0) - pi(1)) factor
        let sel = xi
            * (1.0 - xi)
            * (pi(0) - pi(1))
            * ((tau(0, 1) * tau(0, 1) - tau(0, 0) * tau(0, 0))
                - (tau(1, 1) * tau(1, 1) - tau(1, 0) * tau(1, 0)));
        acc[5].add(w * sel);

        // (7) case-mix pieces: S(x)
        let s = (1.0 - xi) * (m(0, 0) * (1.0 - pi(0)) + m(1, 0) * pi(0))
            + xi * (m(0, 1) * (1.0 - pi(1)) + m(1, 1) * pi(1));
        mean_acc.add(w * s);
        s_sq.add(w * s * s);

        // (8) residual
        let res = (1.0 - xi) * (v(0, 0) * (1.0 - pi(0)) + v(1, 0) * pi(0))
            + xi * (v(0, 1) * (1.0 - pi(1)) + v(1, 1) * pi(1));
        acc[6].add(w * res);

        // total by raw moments
        let mut ey2 = 0.0;
        for z in 0..2 {
            for a in 0..2 {
                ey2 += (m(a, z) * m(a, z) + v(a, z)) * pt.pa[a][z] * pt.pz[z];
            }
        }
        second_moment.add(w * ey2);
    }

    let grand_mean = mean_acc.total();
    let w7 = s_sq.total() - grand_mean * grand_mean;
    let total = second_moment.total() - grand_mean * grand_mean;

    Ok(Components {
        w1: acc[0].total(),
        w2: acc[1].total(),
        w3: acc[2].total(),
        w4: acc[3].total(),
        w5: acc[4].total(),
        w6: acc[5].total(),
        w7,
        w8: acc[6].total(),
        total,
        sample_variance_y: None,
        n_used: law.points.len(),
        empty_cells: Vec::new(),
    })
}
