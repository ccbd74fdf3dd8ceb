//! `cvd`: decompose outcome variance across hospitals and groups, or run the
//! simulation harness. Every run takes an explicit seed and writes a manifest
//! sufficient to reproduce it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cvd_core::data::{load_csv, ColumnRoles, OutcomeKind};
use cvd_core::decompose::{decompose, Components, COMPONENT_NAMES};
use cvd_core::models::fit_models;
use cvd_core::simulate::{
    builtin, run_replicates_with_draws, true_components, ReplicationReport, Scenario, TruthReport,
    BUILTIN_SCENARIOS,
};
use cvd_core::uncertainty::{bootstrap, posterior_draws, summarize, IntervalMethod, UncertaintySummary};
use cvd_core::Error;

#[derive(Parser)]
#[command(name = "cvd", version, about = "Eight-way causal variance decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a CSV dataset into the eight variance components.
    Decompose(DecomposeArgs),
    /// Generate data from a scenario and evaluate the estimator over replicates.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OutcomeKindArg {
    Binary,
    Continuous,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum UncertaintyArg {
    None,
    Draws,
    Bootstrap,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScaleArg {
    /// Raw variance units.
    Raw,
    /// Percent of the total variance.
    Percent,
}

#[derive(Args, Serialize)]
struct DecomposeArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    outcome: String,
    /// Hospital column name.
    #[arg(long)]
    hospital: String,
    /// Group column name.
    #[arg(long)]
    group: String,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_enum)]
    outcome_kind: OutcomeKindArg,
    /// Explicit hospital level order; the first level is the reference.
    #[arg(long, value_delimiter = ',')]
    hospital_levels: Option<Vec<String>>,
    /// Explicit group level order; the first level is the reference.
    #[arg(long, value_delimiter = ',')]
    group_levels: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "none")]
    uncertainty: UncertaintyArg,
    /// Number of draws or bootstrap replicates.
    #[arg(short = 'B', long = "B", default_value_t = 500)]
    b: usize,
    /// Master seed; required so runs are reproducible by construction.
    #[arg(long)]
    seed: u64,
    /// Output path prefix; writes PREFIX.json, PREFIX.csv and
    /// PREFIX.manifest.json. Without it the JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "percent")]
    scale: ScaleArg,
    /// Cap on worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Builtin scenario name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of replicates; 0 skips the replication run.
    #[arg(long, default_value_t = 0)]
    reps: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Also evaluate the true components on a super-population draw.
    #[arg(long)]
    truth: bool,
    /// Super-population size for --truth.
    #[arg(long, default_value_t = 10_000)]
    superpop: usize,
    /// Draw-based standard errors per replicate (0 disables).
    #[arg(long, default_value_t = 0)]
    draws: usize,
    /// Also emit a long-format summary table across components.
    #[arg(long)]
    figure_data: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Cap on worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Serialize)]
struct RunManifest<C: Serialize> {
    command: &'static str,
    config: C,
    seed: u64,
    version: &'static str,
    /// SHA-256 of the input file, when the command reads one.
    input_sha256: Option<String>,
    elapsed_ms: u128,
}

#[derive(Serialize)]
struct DecomposeOutput {
    components: Components,
    /// Component values on the requested scale, keyed by name.
    scaled: Vec<(String, f64)>,
    scale: ScaleArg,
    proportions_of_total: Vec<(String, f64)>,
    uncertainty: Option<UncertaintySummary>,
    n: usize,
    j: usize,
    k: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), Error> {
    init_threads(args.threads);
    let started = Instant::now();

    let outcome_kind = match args.outcome_kind {
        OutcomeKindArg::Binary => OutcomeKind::Binary,
        OutcomeKindArg::Continuous => OutcomeKind::Continuous,
    };
    let roles = ColumnRoles {
        outcome: args.outcome.clone(),
        hospital: args.hospital.clone(),
        group: args.group.clone(),
        covariates: args.covariates.clone(),
        outcome_kind,
        hospital_levels: args.hospital_levels.clone(),
        group_levels: args.group_levels.clone(),
    };
    let dataset = load_csv(&args.data, &roles)?;
    let link = match outcome_kind {
        OutcomeKind::Binary => cvd_core::models::Link::Logit,
        OutcomeKind::Continuous => cvd_core::models::Link::Identity,
    };
    let models = fit_models(&dataset, link)?;
    let components = decompose(&dataset, &models)?;

    let uncertainty = match args.uncertainty {
        UncertaintyArg::None => None,
        UncertaintyArg::Draws => {
            let draws = posterior_draws(&dataset, &models, args.b, args.seed)?;
            Some(summarize(&draws, IntervalMethod::NormalDraws)?)
        }
        UncertaintyArg::Bootstrap => {
            let reps = bootstrap(&dataset, link, args.b, args.seed)?;
            let mut summary = summarize(&reps, IntervalMethod::Bootstrap)?;
            summary.draws_failed = args.b - summary.draws_used;
            Some(summary)
        }
    };

    let named = |values: [f64; 9]| -> Vec<(String, f64)> {
        COMPONENT_NAMES
            .iter()
            .zip(values.iter())
            .map(|(n, v)| (n.to_string(), *v))
            .collect()
    };
    let scaled = match args.scale {
        ScaleArg::Raw => named(components.values()),
        ScaleArg::Percent => {
            let mut p = components.proportions();
            for v in p.iter_mut() {
                *v *= 100.0;
            }
            named(p)
        }
    };
    let output = DecomposeOutput {
        scaled,
        scale: args.scale,
        proportions_of_total: named(components.proportions()),
        uncertainty,
        n: dataset.n(),
        j: dataset.j,
        k: dataset.k,
        components,
    };

    let input_sha256 = Some(sha256_file(&args.data)?);
    let seed = args.seed;
    if let Some(prefix) = args.out.clone() {
        let manifest = RunManifest {
            command: "decompose",
            config: &args,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            input_sha256,
            elapsed_ms: started.elapsed().as_millis(),
        };
        write_json(&with_suffix(&prefix, ".json"), &output)?;
        write_components_csv(&with_suffix(&prefix, ".csv"), &output)?;
        write_json(&with_suffix(&prefix, ".manifest.json"), &manifest)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&output)?);
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_components_csv(path: &Path, output: &DecomposeOutput) -> Result<(), Error> {
    let mut text = String::from("component,value,scaled,proportion_of_total");
    let with_unc = output.uncertainty.is_some();
    if with_unc {
        text.push_str(",point,sd,lower,upper");
    }
    text.push('\n');
    let values = output.components.values();
    for (c, name) in COMPONENT_NAMES.iter().enumerate() {
        text.push_str(&format!(
            "{name},{},{},{}",
            values[c], output.scaled[c].1, output.proportions_of_total[c].1
        ));
        if let Some(u) = &output.uncertainty {
            let iv = &u.intervals[c];
            text.push_str(&format!(",{},{},{},{}", iv.point, iv.sd, iv.lower, iv.upper));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_scenario(spec: &str) -> Result<Scenario, Error> {
    if BUILTIN_SCENARIOS.contains(&spec) {
        builtin(spec)
    } else {
        let text = std::fs::read_to_string(spec)?;
        Scenario::from_json(&text)
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    init_threads(args.threads);
    let started = Instant::now();
    let scenario = load_scenario(&args.scenario)?;
    std::fs::create_dir_all(&args.out)?;

    let input_sha256 = if Path::new(&args.scenario).is_file() {
        Some(sha256_file(Path::new(&args.scenario))?)
    } else {
        None
    };

    let truth = if args.truth {
        let t = true_components(&scenario, args.superpop, args.seed)?;
        write_json(&args.out.join("truth.json"), &t)?;
        Some(t)
    } else {
        None
    };

    let report = if args.reps > 0 {
        let r = run_replicates_with_draws(&scenario, args.n, args.reps, args.seed, args.draws)?;
        write_json(&args.out.join("replicates.json"), &r)?;
        write_replicates_csv(&args.out.join("replicates.csv"), &r)?;
        Some(r)
    } else {
        None
    };

    if args.figure_data {
        write_figure_data(
            &args.out.join("figure_data.csv"),
            &scenario,
            args.n,
            truth.as_ref(),
            report.as_ref(),
        )?;
    }

    let manifest = RunManifest {
        command: "simulate",
        config: &args,
        seed: args.seed,
        version: env!("CARGO_PKG_VERSION"),
        input_sha256,
        elapsed_ms: started.elapsed().as_millis(),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn write_replicates_csv(path: &Path, report: &ReplicationReport) -> Result<(), Error> {
    let mut text = String::from("replicate,component,value\n");
    for (r, c) in report.replicates.iter().enumerate() {
        for (name, v) in COMPONENT_NAMES.iter().zip(c.values().iter()) {
            text.push_str(&format!("{r},{name},{v}\n"));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Long-format summary: per component, the replicate median, mean, Monte
/// Carlo SD, mean draw-based SE, and the truth when available.
fn write_figure_data(
    path: &Path,
    scenario: &Scenario,
    n: usize,
    truth: Option<&TruthReport>,
    report: Option<&ReplicationReport>,
) -> Result<(), Error> {
    let mut text =
        String::from("scenario,n,component,median,mean,mc_sd,mean_draw_se,truth,bias\n");
    let medians = report.map(|r| r.medians());
    let means = report.map(|r| r.means());
    let sds = report.map(|r| r.sds());
    let draw_se = report.and_then(|r| r.mean_draw_se());
    for (c, name) in COMPONENT_NAMES.iter().enumerate() {
        let fmt = |o: Option<[f64; 9]>| match o {
            Some(v) => v[c].to_string(),
            None => String::new(),
        };
        let truth_v = truth.map(|t| t.components.values());
        let bias = match (medians, truth_v) {
            (Some(m), Some(t)) => (m[c] - t[c]).to_string(),
            _ => String::new(),
        };
        text.push_str(&format!(
            "{},{n},{name},{},{},{},{},{},{bias}\n",
            scenario.name,
            fmt(medians),
            fmt(means),
            fmt(sds),
            fmt(draw_se),
            fmt(truth_v),
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}
