//! `irtlong` command-line front end.
//!
//! Exit status: 0 when every requested fit converged and every output was
//! written, 2 when outputs were written but some fit did not converge (or a
//! simulation replication failed), 1 on any other error. Argument errors
//! are reported by the parser with status 2 before any file is touched.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use irtlong::config::ConfigDoc;
use irtlong::data::{ingest_csv, Dataset, IngestReport};
use irtlong::estimate::{fit, write_estimates_csv, FitOptions, FitResult};
use irtlong::lmm::{fit_lmm, LmmFit, LmmModel};
use irtlong::model::ModelSpec;
use irtlong::quadrature::QuadratureRule;
use irtlong::score::{score_dataset, write_scores_csv};
use irtlong::simulate::{
    run_scenario, write_records_csv, write_summary_csv, write_table_csv, Manifest,
};
use irtlong::{Error, Result};

use irtlong_cli::output::{InputRecord, OutputDir, RunLog};
use irtlong_cli::plot::{self, profiles, PlotParams};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_NODES: usize = 7;

#[derive(Parser)]
#[command(
    name = "irtlong",
    version,
    about = "Longitudinal IRT mixed models for ordinal questionnaire data"
)]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a data file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the run log; fitting uses no randomness.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Gauss-Hermite nodes per random-effect dimension.
        #[arg(long, default_value_t = DEFAULT_NODES)]
        nodes: usize,
    },
    /// Run a model-selection simulation study.
    Simulate {
        /// Scenario manifest. Required unless --builtin is given.
        #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
        manifest: Option<PathBuf>,
        /// Every cell of the built-in scenario grid.
        #[arg(long)]
        builtin: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_NODES)]
        nodes: usize,
        /// Overrides the manifest's replication count.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Summary scores and linear mixed models.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numeric data behind distribution-function and category-probability plots.
    Plotdata {
        #[arg(long)]
        out: PathBuf,
        /// Model spec for the probability decomposition; needs --params.
        #[arg(long, requires = "params")]
        spec: Option<PathBuf>,
        /// Parameter values for the probability decomposition.
        #[arg(long, requires = "spec")]
        params: Option<PathBuf>,
    },
}

/// Commands report whether every fit converged.
enum Outcome {
    Complete,
    Incomplete,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    let verbose = cli.verbose;
    match pool.install(|| run(cli.command, verbose)) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Incomplete) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, verbose: bool) -> Result<Outcome> {
    match command {
        Command::Fit {
            data,
            spec,
            out,
            seed,
            nodes,
        } => cmd_fit(&data, &spec, &out, seed, nodes, verbose),
        Command::Simulate {
            manifest,
            builtin,
            out,
            seed,
            nodes,
            replications,
        } => cmd_simulate(
            manifest.as_deref(),
            builtin,
            &out,
            seed,
            nodes,
            replications,
            verbose,
        ),
        Command::Score { data, spec, out } => cmd_score(&data, &spec, &out),
        Command::Plotdata { out, spec, params } => {
            cmd_plotdata(&out, spec.as_deref().zip(params.as_deref()))
        }
    }
}

fn read_text(record: (InputRecord, Vec<u8>)) -> Result<(InputRecord, String)> {
    let (rec, bytes) = record;
    let text =
        String::from_utf8(bytes).map_err(|_| Error::spec(format!("{} is not UTF-8", rec.path)))?;
    Ok((rec, text))
}

fn load_spec(path: &Path) -> Result<(InputRecord, ModelSpec)> {
    let (rec, text) = read_text(InputRecord::read("spec", path)?)?;
    let spec = ModelSpec::from_config(&ConfigDoc::parse(&text)?)
        .map_err(|e| Error::spec(format!("{}: {e}", path.display())))?;
    Ok((rec, spec))
}

fn load_data(path: &Path, spec: &ModelSpec) -> Result<(InputRecord, Dataset, IngestReport)> {
    let (rec, bytes) = InputRecord::read("data", path)?;
    let (data, report) = ingest_csv(bytes.as_slice(), spec)?;
    Ok((rec, data, report))
}

/// Sorted distinct values of every covariate, for trajectory profiles.
fn observed_profiles(data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.covariate_names().len())
        .map(|c| {
            let set: BTreeSet<u64> = data
                .subjects()
                .iter()
                .flat_map(|s| s.visits.iter().map(move |v| v.covariates[c].to_bits()))
                .collect();
            let mut vals: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
            vals.sort_by(f64::total_cmp);
            vals
        })
        .collect()
}

fn observed_times(data: &Dataset) -> Vec<f64> {
    let set: BTreeSet<u64> = data
        .subjects()
        .iter()
        .flat_map(|s| s.visits.iter().map(|v| v.time.to_bits()))
        .collect();
    let mut t: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    t.sort_by(f64::total_cmp);
    t
}

#[derive(Serialize)]
struct FitDetails {
    ingest: IngestReport,
    converged: bool,
    loglik: f64,
    bic: f64,
    iterations: usize,
}

fn cmd_fit(
    data_path: &Path,
    spec_path: &Path,
    out: &Path,
    seed: u64,
    nodes: usize,
    verbose: bool,
) -> Result<Outcome> {
    let (spec_rec, spec) = load_spec(spec_path)?;
    let (data_rec, data, report) = load_data(data_path, &spec)?;
    if report.missing > 0 {
        eprintln!("warning: {} missing responses", report.missing);
    }
    let opts = FitOptions {
        quadrature: QuadratureRule::new(nodes)?,
        ..FitOptions::default()
    };
    let mut dir = OutputDir::acquire(out)?;
    if verbose {
        eprintln!(
            "fitting {} subjects, {} observations",
            report.subjects, report.observations
        );
    }
    let (result, converged): (FitResult, bool) = match fit(&spec, &data, None, &opts) {
        Ok(r) => (r, true),
        Err(Error::NoConvergence { best }) => (*best, false),
        Err(e) => return Err(e),
    };
    dir.write_with("estimates.csv", |w| write_estimates_csv(&result, w))?;
    dir.write_with("fit_summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &result)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    })?;
    let profs = profiles(data.covariate_names(), &observed_profiles(&data));
    dir.write_with("probability_decomposition.csv", |w| {
        plot::write_decomposition(
            &spec,
            &result.items,
            &result.beta,
            &observed_times(&data),
            &profs,
            w,
        )
    })?;
    let details = FitDetails {
        ingest: report,
        converged,
        loglik: result.loglik,
        bic: result.bic,
        iterations: result.convergence.iterations,
    };
    let status = if converged { "ok" } else { "not_converged" };
    dir.finish(RunLog::new(
        "fit",
        seed,
        nodes,
        vec![spec_rec, data_rec],
        status,
        details,
    ))?;
    if !converged {
        eprintln!(
            "error: optimizer did not converge after {} iterations (relative gradient {:.3e}); diagnostics written",
            result.convergence.iterations, result.convergence.relative_gradient
        );
        return Ok(Outcome::Incomplete);
    }
    Ok(Outcome::Complete)
}

#[derive(Serialize)]
struct ScenarioLog {
    name: String,
    seed: u64,
    replications: usize,
    failures: usize,
}

#[derive(Serialize)]
struct SimulateDetails {
    builtin: bool,
    manifest: Manifest,
    scenarios: Vec<ScenarioLog>,
}

fn cmd_simulate(
    manifest_path: Option<&Path>,
    builtin: bool,
    out: &Path,
    seed: u64,
    nodes: usize,
    replications: Option<usize>,
    verbose: bool,
) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let mut manifest = match manifest_path {
        Some(p) => {
            let (rec, text) = read_text(InputRecord::read("manifest", p)?)?;
            inputs.push(rec);
            Manifest::parse(&text, seed)
                .map_err(|e| Error::spec(format!("{}: {e}", p.display())))?
        }
        None => Manifest::builtin(irtlong::simulate::DEFAULT_REPLICATIONS, seed),
    };
    if let Some(n) = replications {
        manifest = manifest.with_replications(n);
    }
    manifest.validate()?;
    let quad = QuadratureRule::new(nodes)?;
    let mut dir = OutputDir::acquire(out)?;
    let mut summaries = Vec::with_capacity(manifest.scenarios.len());
    for (k, sc) in manifest.scenarios.iter().enumerate() {
        if verbose {
            eprintln!(
                "[{}/{}] {} ({} replications)",
                k + 1,
                manifest.scenarios.len(),
                sc.name,
                sc.replications
            );
        }
        let summary = run_scenario(sc, &manifest.fit_models, &quad)?;
        dir.write_with(&format!("cells/{}.csv", sc.name), |w| {
            write_records_csv(&summary, w)
        })?;
        summaries.push(summary);
    }
    dir.write_with("selection_summary.csv", |w| {
        write_summary_csv(&summaries, w)
    })?;
    for table in [4u8, 5] {
        if summaries.iter().any(|s| s.scenario.table == Some(table)) {
            dir.write_with(&format!("table{table}.csv"), |w| {
                write_table_csv(&summaries, table, &manifest.fit_models, w)
            })?;
        }
    }
    let logs: Vec<ScenarioLog> = summaries
        .iter()
        .map(|s| ScenarioLog {
            name: s.scenario.name.clone(),
            seed: s.scenario.dataset_seed(),
            replications: s.scenario.replications,
            failures: s.classes.iter().map(|c| c.failures).sum(),
        })
        .collect();
    let failed: usize = logs.iter().map(|l| l.failures).sum();
    let status = if failed == 0 {
        "ok"
    } else {
        "failed_replications"
    };
    let details = SimulateDetails {
        builtin,
        manifest,
        scenarios: logs,
    };
    dir.finish(RunLog::new(
        "simulate", seed, nodes, inputs, status, details,
    ))?;
    if failed > 0 {
        eprintln!("error: {failed} model fits failed; see cells/*.csv");
        return Ok(Outcome::Incomplete);
    }
    Ok(Outcome::Complete)
}

#[derive(Serialize)]
struct LmmReport {
    m1: LmmFit,
    m2: LmmFit,
    /// `M1` or `M2` by BIC; the smaller model wins ties.
    selected: &'static str,
}

#[derive(Serialize)]
struct ScoreDetails {
    ingest: IngestReport,
    scored_points: usize,
    converged: bool,
}

fn cmd_score(data_path: &Path, spec_path: &Path, out: &Path) -> Result<Outcome> {
    let (spec_rec, spec) = load_spec(spec_path)?;
    let (data_rec, data, report) = load_data(data_path, &spec)?;
    let scores = score_dataset(&data)?;
    let m1 = fit_lmm(LmmModel::M1, &scores, spec.baseline_time)?;
    let m2 = fit_lmm(LmmModel::M2, &scores, spec.baseline_time)?;
    let converged = m1.converged && m2.converged;
    let selected = match irtlong::estimate::select_by_bic(m1.bic, m1.n_params, m2.bic, m2.n_params)
    {
        irtlong::estimate::Selected::First => "M1",
        irtlong::estimate::Selected::Second => "M2",
    };
    let mut dir = OutputDir::acquire(out)?;
    dir.write_with("scores.csv", |w| write_scores_csv(&scores, w))?;
    let lmm = LmmReport { m1, m2, selected };
    dir.write_with("lmm.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &lmm).map_err(|e| Error::Io(std::io::Error::other(e)))
    })?;
    let details = ScoreDetails {
        ingest: report,
        scored_points: scores.points.len(),
        converged,
    };
    let status = if converged { "ok" } else { "not_converged" };
    dir.finish(RunLog::new(
        "score",
        0,
        0,
        vec![spec_rec, data_rec],
        status,
        details,
    ))?;
    Ok(if converged {
        Outcome::Complete
    } else {
        Outcome::Incomplete
    })
}

fn cmd_plotdata(out: &Path, decomposition: Option<(&Path, &Path)>) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let mut params = None;
    if let Some((spec_path, params_path)) = decomposition {
        let (spec_rec, spec) = load_spec(spec_path)?;
        let (params_rec, text) = read_text(InputRecord::read("params", params_path)?)?;
        let p = PlotParams::parse(&text, &spec)
            .map_err(|e| Error::spec(format!("{}: {e}", params_path.display())))?;
        inputs.push(spec_rec);
        inputs.push(params_rec);
        params = Some((spec, p));
    }
    let mut dir = OutputDir::acquire(out)?;
    dir.write_with("cdf_curves.csv", |w| plot::write_cdf_curves(w))?;
    dir.write_with("discrimination_curves.csv", |w| {
        plot::write_discrimination_curves(w)
    })?;
    if let Some((spec, p)) = &params {
        let profs = profiles(&spec.covariate_names(), &p.profile_values);
        dir.write_with("probability_decomposition.csv", |w| {
            plot::write_decomposition(spec, &p.items, &p.beta, &p.times, &profs, w)
        })?;
    }
    dir.finish(RunLog::new("plotdata", 0, 0, inputs, "ok", ()))?;
    Ok(Outcome::Complete)
}
