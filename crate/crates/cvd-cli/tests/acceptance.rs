//! Acceptance gate: eight end-to-end checks with pinned tolerances, printing
//! one PASS/FAIL line each.

use std::process::Command;

use rand::Rng;

use cvd_core::data::OutcomeKind;
use cvd_core::decompose::{build_cells, decompose, CellTable};
use cvd_core::models::fit_models;
use cvd_core::oracles::{
    brute_force_components, dichotomous_components, DiscreteLaw, LawPoint,
};
use cvd_core::rng::stream_rng;
use cvd_core::simulate::{
    builtin, empirical_law, generate, run_replicates, run_replicates_with_draws, true_components,
    true_models, zero_assignment_group_terms, zero_group_outcome_terms,
    zero_hospital_outcome_terms, CovariateSpec, Scenario,
};
use cvd_core::uncertainty::{bootstrap, MvnSampler};

fn gate(name: &str, result: Result<String, String>) {
    match result {
        Ok(detail) => println!("ACCEPTANCE {name}: PASS ({detail})"),
        Err(msg) => {
            println!("ACCEPTANCE {name}: FAIL ({msg})");
            panic!("acceptance criterion {name} failed: {msg}");
        }
    }
}

fn random_scenario(rng: &mut impl Rng, j: usize, k: usize, p: usize, binary: bool) -> Scenario {
    let mut coef = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-0.8..0.8)).collect()
    };
    let covariates = (0..p)
        .map(|c| {
            if c % 2 == 0 {
                CovariateSpec::Bernoulli { p: 0.5 }
            } else {
                CovariateSpec::Normal { mean: 0.0, sd: 1.0 }
            }
        })
        .collect();
    Scenario {
        name: "random".into(),
        j,
        k,
        outcome_kind: if binary { OutcomeKind::Binary } else { OutcomeKind::Continuous },
        covariates,
        group_coef: (0..k - 1).map(|_| coef(1 + p)).collect(),
        hospital_coef: (0..j - 1).map(|_| coef(1 + p + k - 1)).collect(),
        outcome_coef: coef(1 + p + (j - 1) + (k - 1) + (j - 1) * (k - 1)),
        error_sd: 1.0,
    }
}

/// Converts the per-row fitted prediction tables into a discrete law with
/// equal point masses.
fn law_from_cells(cells: &CellTable) -> DiscreteLaw {
    let (j, k) = (cells.j, cells.k);
    let w = 1.0 / cells.rows.len() as f64;
    let points = cells
        .rows
        .iter()
        .map(|row| {
            let idx = |a: usize, z: usize| (a - 1) * k + (z - 1);
            LawPoint {
                prob: w,
                x: Vec::new(),
                pz: row.pz.clone(),
                pa: (1..=j).map(|a| (1..=k).map(|z| row.pa[idx(a, z)]).collect()).collect(),
                m: (1..=j).map(|a| (1..=k).map(|z| row.m[idx(a, z)]).collect()).collect(),
                v: (1..=j).map(|a| (1..=k).map(|z| row.v[idx(a, z)]).collect()).collect(),
            }
        })
        .collect();
    DiscreteLaw { j, k, points }
}

// 1. Exact-sum identity on 100 randomized dataset/model pairs over
//    J in 2..=10, K in 2..=4, p in 0..=3 and both links, at 1e-10 relative.
#[test]
fn criterion_1_sum_identity() {
    gate("1 (sum identity)", (|| {
        let mut rng = stream_rng(101, 0);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut seed = 0u64;
        while done < 100 {
            seed += 1;
            let j = rng.gen_range(2..=10);
            let k = rng.gen_range(2..=4);
            let p = rng.gen_range(0..=3);
            let binary = rng.gen_bool(0.5);
            let s = random_scenario(&mut rng, j, k, p, binary);
            let Ok(d) = generate(&s, 250, seed) else { continue };
            let models = true_models(&s).map_err(|e| e.to_string())?;
            let c = decompose(&d, &models).map_err(|e| e.to_string())?;
            let rel = (c.sum_of_components() - c.total).abs() / c.total.abs().max(1e-300);
            worst = worst.max(rel);
            if rel > 1e-10 {
                return Err(format!("pair {done}: relative error {rel:e}"));
            }
            done += 1;
        }
        Ok(format!("100 pairs, worst relative error {worst:.2e}"))
    })());
}

// 2. Oracle equivalence: the estimator agrees with the brute-force oracle on
//    100 fitted laws at 1e-10, and the closed-form dichotomous oracle agrees
//    with brute force on 100 random 2x2 laws at 1e-12.
#[test]
fn criterion_2_oracle_equivalence() {
    gate("2 (oracle equivalence)", (|| {
        let mut rng = stream_rng(202, 0);
        let mut worst_fit: f64 = 0.0;
        let mut done = 0;
        let mut seed = 1000u64;
        while done < 100 {
            seed += 1;
            let j = rng.gen_range(2..=4);
            let k = rng.gen_range(2..=3);
            let p = rng.gen_range(0..=2);
            let binary = rng.gen_bool(0.5);
            let s = random_scenario(&mut rng, j, k, p, binary);
            let n = 150;
            let Ok(d) = generate(&s, n, seed) else { continue };
            let Ok(models) = fit_models(&d, s.link()) else { continue };
            let est = decompose(&d, &models).map_err(|e| e.to_string())?;
            let cells = build_cells(&d, &models).map_err(|e| e.to_string())?;
            let law = law_from_cells(&cells);
            let brute = brute_force_components(&law)
                .map_err(|e| e.to_string())?
                .with_sample_case_mix(n);
            for (a, b) in est.values().iter().zip(brute.values().iter()) {
                let diff = (a - b).abs();
                worst_fit = worst_fit.max(diff);
                if diff > 1e-10 {
                    return Err(format!("fitted law {done}: |{a} - {b}| = {diff:e}"));
                }
            }
            done += 1;
        }

        let mut worst_dich: f64 = 0.0;
        for _ in 0..100 {
            let n_pts = rng.gen_range(1..=4);
            let mut point = |_: usize| -> LawPoint {
                let xi: f64 = rng.gen_range(0.05..0.95);
                let pi0: f64 = rng.gen_range(0.05..0.95);
                let pi1: f64 = rng.gen_range(0.05..0.95);
                let m: Vec<Vec<f64>> =
                    (0..2).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                let v: Vec<Vec<f64>> =
                    (0..2).map(|_| (0..2).map(|_| rng.gen_range(0.0..0.5)).collect()).collect();
                LawPoint {
                    prob: 0.0,
                    x: Vec::new(),
                    pz: vec![1.0 - xi, xi],
                    pa: vec![vec![1.0 - pi0, 1.0 - pi1], vec![pi0, pi1]],
                    m,
                    v,
                }
            };
            let mut points: Vec<LawPoint> = (0..n_pts).map(&mut point).collect();
            let w = 1.0 / n_pts as f64;
            for pt in points.iter_mut() {
                pt.prob = w;
            }
            let law = DiscreteLaw { j: 2, k: 2, points };
            let closed = dichotomous_components(&law).map_err(|e| e.to_string())?;
            let brute = brute_force_components(&law).map_err(|e| e.to_string())?.components;
            for (a, b) in closed.values().iter().zip(brute.values().iter()) {
                let diff = (a - b).abs();
                worst_dich = worst_dich.max(diff);
                if diff > 1e-12 {
                    return Err(format!("dichotomous law: |{a} - {b}| = {diff:e}"));
                }
            }
        }
        Ok(format!(
            "100 fitted laws worst {worst_fit:.2e}, 100 dichotomous laws worst {worst_dich:.2e}"
        ))
    })());
}

// 3. Scenario-zero suite: three causal null generators drive their designated
//    components below 1e-12 at the population level, and the fitted estimates
//    at n = 5000 are within 2 bootstrap standard errors of zero.
#[test]
fn criterion_3_scenario_zeros() {
    gate("3 (scenario zeros)", (|| {
        let base = builtin("j5-binary").map_err(|e| e.to_string())?;
        let cases: [(&str, Scenario, Vec<usize>); 3] = [
            ("no hospital effect", zero_hospital_outcome_terms(&base), vec![0, 3, 4]),
            (
                "no group outcome effect",
                zero_assignment_group_terms(&zero_group_outcome_terms(&base)),
                vec![1, 4],
            ),
            ("group-blind assignment", zero_assignment_group_terms(&base), vec![0, 2, 5]),
        ];
        let mut detail = Vec::new();
        for (label, s, zero_idx) in &cases {
            // population level
            let law = empirical_law(s, 3_000, 303).map_err(|e| e.to_string())?;
            let pop = brute_force_components(&law).map_err(|e| e.to_string())?.components;
            for &c in zero_idx {
                let v = pop.values()[c];
                if v.abs() >= 1e-12 {
                    return Err(format!("{label}: population component {c} = {v:e}"));
                }
            }
            // fitted at n = 5000, bootstrap SE
            let d = generate(s, 5_000, 304).map_err(|e| e.to_string())?;
            let models = fit_models(&d, s.link()).map_err(|e| e.to_string())?;
            let est = decompose(&d, &models).map_err(|e| e.to_string())?;
            let boot = bootstrap(&d, s.link(), 80, 305).map_err(|e| e.to_string())?;
            for &c in zero_idx {
                let vals: Vec<f64> = boot.iter().map(|b| b.values()[c]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let se = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt();
                let v = est.values()[c];
                if v.abs() > 2.0 * se {
                    return Err(format!(
                        "{label}: fitted component {c} = {v:e} exceeds 2 x SE {se:e}"
                    ));
                }
                detail.push(format!("{label} c{c} |{v:.1e}| <= 2x{se:.1e}"));
            }
        }
        Ok(detail.join("; "))
    })());
}

// 4. Additive-model path effects: with identity link and no interactions the
//    Z-weighted means of the indirect and direct effects are below 1e-10 per
//    row on 20 random configurations.
#[test]
fn criterion_4_additive_path_effects() {
    gate("4 (additive path effects)", (|| {
        let mut rng = stream_rng(404, 0);
        let mut done = 0;
        let mut seed = 2000u64;
        let mut worst: f64 = 0.0;
        while done < 20 {
            seed += 1;
            let j = rng.gen_range(2..=6);
            let k = rng.gen_range(2..=4);
            let p = rng.gen_range(0..=3);
            let mut s = random_scenario(&mut rng, j, k, p, false);
            let int_off = s.outcome_coef.len() - (j - 1) * (k - 1);
            for c in int_off..s.outcome_coef.len() {
                s.outcome_coef[c] = 0.0;
            }
            let Ok(d) = generate(&s, 200, seed) else { continue };
            let models = true_models(&s).map_err(|e| e.to_string())?;
            let cells = build_cells(&d, &models).map_err(|e| e.to_string())?;
            for row in &cells.rows {
                let (ind, dir) = cvd_core::decompose::mean_path_effects(row, j, k);
                worst = worst.max(ind.abs()).max(dir.abs());
                if ind.abs() >= 1e-10 || dir.abs() >= 1e-10 {
                    return Err(format!("config {done}: mean effects ({ind:e}, {dir:e})"));
                }
            }
            done += 1;
        }
        Ok(format!("20 configs, worst per-row mean {worst:.2e}"))
    })());
}

// 5. Bias shrinkage and convergence to the truth, five-hospital binary
//    scenario, 200 replicates per sample size.
#[test]
fn criterion_5_bias_shrinkage() {
    gate("5 (bias shrinkage)", (|| {
        let s = builtin("j5-binary").map_err(|e| e.to_string())?;
        let truth = true_components(&s, 10_000, 505).map_err(|e| e.to_string())?;
        let reps = 200;
        let sizes = [500usize, 1000, 2500, 5000];
        let mut medians_by_n = Vec::new();
        let mut sds_by_n = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let report =
                run_replicates(&s, n, reps, 506 + i as u64).map_err(|e| e.to_string())?;
            if report.failed > 0 {
                return Err(format!("{} failed fits at n = {n}", report.failed));
            }
            medians_by_n.push(report.medians());
            sds_by_n.push(report.sds());
        }
        // (i) final bias below one third of the initial bias for >= 6 of 8
        let t = truth.components.values();
        let mut shrunk = 0;
        for c in 0..8 {
            let initial = (medians_by_n[0][c] - t[c]).abs();
            let final_ = (medians_by_n[3][c] - t[c]).abs();
            if final_ < initial / 3.0 {
                shrunk += 1;
            }
        }
        if shrunk < 6 {
            return Err(format!("only {shrunk} of 8 components shrank to < 1/3 of initial bias"));
        }
        // (ii) at n = 5000 each median within 3 x (MC SD / sqrt(reps)) plus
        // the truth's own MC error
        for c in 0..9 {
            let tol = 3.0 * (sds_by_n[3][c] / (reps as f64).sqrt() + truth.mc_se[c]);
            let diff = (medians_by_n[3][c] - t[c]).abs();
            if diff > tol {
                return Err(format!("component {c}: |median - truth| = {diff:e} > {tol:e}"));
            }
        }
        Ok(format!("{shrunk}/8 components shrank; all medians within tolerance at n=5000"))
    })());
}

// 6. Draw-based standard errors track the Monte Carlo standard deviations:
//    200 replicates of 500 draws each at n = 5000.
#[test]
fn criterion_6_se_calibration() {
    gate("6 (SE calibration)", (|| {
        let s = builtin("j5-binary").map_err(|e| e.to_string())?;
        let report = run_replicates_with_draws(&s, 5_000, 200, 606, 500)
            .map_err(|e| e.to_string())?;
        if report.failed > 0 {
            return Err(format!("{} failed fits", report.failed));
        }
        let mc_sd = report.sds();
        let mean_se = report.mean_draw_se().ok_or("missing draw SEs")?;
        let mut worst = 0.0f64;
        for c in 0..8 {
            let ratio = (mc_sd[c] - mean_se[c]).abs() / mc_sd[c];
            worst = worst.max(ratio);
            if ratio >= 0.25 {
                return Err(format!(
                    "component {c}: |MC SD {:.3e} - mean SE {:.3e}| = {:.0}% of MC SD",
                    mc_sd[c],
                    mean_se[c],
                    100.0 * ratio
                ));
            }
        }
        Ok(format!("worst |MC SD - mean SE| = {:.1}% of MC SD", 100.0 * worst))
    })());
}

// 7. Coefficient-draw validity: the empirical covariance of 10^4 draws
//    matches the fitted covariance within 5% in Frobenius norm.
#[test]
fn criterion_7_mvn_draws() {
    gate("7 (MVN draw validity)", (|| {
        let s = builtin("j5-binary").map_err(|e| e.to_string())?;
        let d = generate(&s, 2_000, 707).map_err(|e| e.to_string())?;
        let models = fit_models(&d, s.link()).map_err(|e| e.to_string())?;
        let vcov = &models.outcome.vcov;
        let q = vcov.nrows();
        let sampler = MvnSampler::new(models.outcome.theta.clone(), vcov)
            .map_err(|e| e.to_string())?;
        let n_draws = 10_000;
        let mut rng = stream_rng(708, 0);
        let draws: Vec<_> = (0..n_draws).map(|_| sampler.sample(&mut rng)).collect();
        let mean = draws.iter().fold(nalgebra_zero(q), |acc, d| acc + d) / n_draws as f64;
        let mut emp = nalgebra::DMatrix::zeros(q, q);
        for d in &draws {
            let c = d - &mean;
            emp += &c * c.transpose();
        }
        emp /= (n_draws - 1) as f64;
        let rel = (&emp - vcov).norm() / vcov.norm();
        if rel >= 0.05 {
            return Err(format!("Frobenius relative error {:.3}", rel));
        }
        Ok(format!("{n_draws} draws, Frobenius relative error {:.3}", rel))
    })());
}

fn nalgebra_zero(q: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::zeros(q)
}

// 8. End-to-end run on a synthetic dataset shaped like a large registry
//    analysis: 11 hospitals, 4 groups, 6 covariates, through the CLI.
#[test]
fn criterion_8_end_to_end() {
    gate("8 (end-to-end synthetic run)", (|| {
        let mut rng = stream_rng(808, 0);
        let mut s = random_scenario(&mut rng, 11, 4, 6, true);
        s.name = "synthetic-registry".into();
        let d = generate(&s, 8_000, 809).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let csv = dir.path().join("registry.csv");
        d.write_csv(&csv).map_err(|e| e.to_string())?;

        let out = dir.path().join("run");
        let status = Command::new(env!("CARGO_BIN_EXE_cvd"))
            .args([
                "decompose",
                "--data",
                csv.to_str().unwrap(),
                "--outcome",
                "y",
                "--hospital",
                "hospital",
                "--group",
                "group",
                "--covariates",
                "x1,x2,x3,x4,x5,x6",
                "--outcome-kind",
                "binary",
                "--uncertainty",
                "draws",
                "--B",
                "200",
                "--seed",
                "810",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("exit status {status}"));
        }
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.with_extension("json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let c = &json["components"];
        let sum: f64 = ["w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8"]
            .iter()
            .map(|k| c[k].as_f64().unwrap())
            .sum();
        let total = c["total"].as_f64().unwrap();
        if (sum - total).abs() > 1e-10 * total.abs().max(1.0) {
            return Err(format!("sum identity violated: {sum} vs {total}"));
        }
        if json["uncertainty"]["intervals"].as_array().map(|a| a.len()) != Some(9) {
            return Err("expected nine uncertainty intervals".into());
        }
        if json["j"].as_u64() != Some(11) || json["k"].as_u64() != Some(4) {
            return Err("unexpected dataset shape".into());
        }
        Ok(format!("exit 0, J=11 K=4 p=6, sum identity within {:.1e}", (sum - total).abs()))
    })());
}
