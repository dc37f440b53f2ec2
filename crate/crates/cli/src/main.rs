//! `pnplab` command-line front end for the estimators and experiments.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 degenerate
//! denoiser, 3 self-test failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use pnplab::denoiser::DenoiserSpec;
use pnplab::experiments::with_workers;
use pnplab::report::{render_csv, write_svgs};
use pnplab::selftest::{run_selftest, SelftestOptions};
use pnplab::{
    estimate_delta_opt, run_experiment, verify_sandwich, Error, ExperimentName, ExperimentRecord, ExperimentSpec,
    GmmPrior,
};
use serde::{Deserialize, Serialize};

use manifest::{now, resolved_spec_of, write_atomic, RunManifest};

const SEED_ENV: &str = "PNPLAB_SEED";

#[derive(Parser)]
#[command(name = "pnplab", version, about = "Tweedie-scaled denoisers and PnP-PGD on Gaussian-mixture priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment spec, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides the config, which overrides PNPLAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate delta_opt^2 for a denoiser and check the sandwich inequality.
    DeltaOpt,
    /// Run an experiment: delta-sweep, stability, conv-reg or lipschitz.
    Run {
        name: String,
        /// Same as --config.
        #[arg(value_name = "CONFIG", conflicts_with = "config")]
        config_file: Option<PathBuf>,
        /// Fill the runtime_ms CSV column (makes CSVs run-dependent).
        #[arg(long)]
        record_runtime: bool,
    },
    /// Check the library against its closed-form oracles.
    Selftest {
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_score_bias: f64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::DegenerateDenoiser { .. }) { 2 } else { 1 };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// `delta-opt` configuration. Only `prior`, `denoiser` and `sigma` are required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeltaOptSpec {
    prior: GmmPrior,
    denoiser: DenoiserSpec,
    sigma: f64,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
}

fn default_samples() -> usize {
    pnplab::analysis::DEFAULT_SAMPLES
}

fn read_config(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))
}

/// Parses a spec, or the `resolved_spec` of a manifest.
fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_config(path)?;
    let bad = |e: serde_json::Error| Failure::config(format!("invalid config {}: {e}", path.display()));
    match resolved_spec_of(&text) {
        Some(spec) => serde_json::from_value(spec.map_err(bad)?).map_err(bad),
        None => serde_json::from_str(&text).map_err(bad),
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("{SEED_ENV} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn workers(cli: &Cli) -> CliResult<usize> {
    match cli.workers {
        Some(0) => Err(Failure::config("--workers must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Creates `dir` and proves it writable before any computation starts.
fn ensure_writable(dir: &Path) -> CliResult<()> {
    let fail = |e: std::io::Error| Failure::config(format!("output directory {} is not writable: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(fail)?;
    tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    Ok(())
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::config(format!("cannot write {}: {e}", path.display()))
}

fn write_outputs(
    dir: &Path,
    stem: &str,
    records: &[ExperimentRecord],
    seed: u64,
    record_runtime: bool,
) -> CliResult<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    write_atomic(&csv_path, render_csv(records, seed, record_runtime).as_bytes()).map_err(io_failure(&csv_path))?;
    let mut outputs = vec![csv_path];
    outputs.extend(write_svgs(dir, stem, records)?);
    Ok(outputs)
}

fn cmd_run(cli: &Cli, name: &str, config: Option<&PathBuf>, record_runtime: bool) -> CliResult<()> {
    let name: ExperimentName = name.parse()?;
    let config = config.or(cli.config.as_ref());
    let mut spec: ExperimentSpec = match config {
        Some(path) => parse_config(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(declared) = spec.name {
        if declared != name {
            return Err(Failure::config(format!("config is for experiment `{declared}`, not `{name}`")));
        }
    }
    spec.name = Some(name);
    spec.seed = cli.seed.or(spec.seed).or(env_seed()?);
    if let Some(out) = &cli.out {
        spec.output_dir = Some(out.clone());
    }
    let resolved = spec.resolve()?;
    let workers = workers(cli)?;
    ensure_writable(&resolved.output_dir)?;

    let started_at = now();
    let output = with_workers(workers, || run_experiment(&resolved))??;
    let finished_at = now();

    let dir = &resolved.output_dir;
    let outputs = write_outputs(dir, name.as_str(), &output.records, resolved.seed, record_runtime)?;
    let diverged = output.records.iter().filter(|r| r.diverged()).count();
    let manifest_path = dir.join(format!("{name}.manifest.json"));
    RunManifest {
        command: format!("run {name}"),
        config_path: config.cloned(),
        resolved_spec: serde_json::to_value(&resolved).map_err(Error::from)?,
        seed: resolved.seed,
        workers,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at,
        outputs: outputs.clone(),
    }
    .write(&manifest_path)
    .map_err(io_failure(&manifest_path))?;

    println!("{name}: {} records, {diverged} diverged grid points", output.records.len());
    println!("wrote {} ({} plots) and {}", outputs[0].display(), outputs.len() - 1, manifest_path.display());
    Ok(())
}

fn cmd_delta_opt(cli: &Cli) -> CliResult<()> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::config("delta-opt needs --config <path>"))?;
    let mut spec: DeltaOptSpec = parse_config(path)?;
    spec.seed = Some(cli.seed.or(spec.seed).or(env_seed()?).unwrap_or(0));
    if let Some(out) = &cli.out {
        spec.output_dir = Some(out.clone());
    }
    let out = spec.output_dir.get_or_insert_with(|| PathBuf::from("out")).clone();
    let seed = spec.seed.unwrap_or(0);
    if !(spec.sigma > 0.0) || !spec.sigma.is_finite() {
        return Err(Failure::config(format!("`sigma` must be positive, got {}", spec.sigma)));
    }
    let workers = workers(cli)?;
    ensure_writable(&out)?;

    let started_at = now();
    let prior = Arc::new(spec.prior.clone());
    let d = spec.denoiser.build(&prior, spec.sigma)?;
    let (estimate, sandwich) = with_workers(workers, || -> pnplab::Result<_> {
        let est = estimate_delta_opt(&d, &prior, spec.sigma, spec.samples, seed)?;
        let sandwich =
            if est.is_well_posed() { Some(verify_sandwich(&d, &prior, spec.sigma, spec.samples, seed)?) } else { None };
        Ok((est, sandwich))
    })??;
    let finished_at = now();

    println!("delta_opt_sq = {}", estimate.delta_opt_sq);
    println!("stderr = {}", estimate.stderr_delta_opt_sq);
    println!("numerator = {}", estimate.numerator);
    println!("denominator = {}", estimate.denominator);
    let mut rec = ExperimentRecord {
        experiment: "delta-opt".into(),
        key: spec.sigma,
        metrics: Default::default(),
        runtime_ms: 0.0,
    };
    rec.metrics.insert("delta_opt_sq".into(), estimate.delta_opt_sq);
    rec.metrics.insert("delta_opt_sq_stderr".into(), estimate.stderr_delta_opt_sq);
    rec.metrics.insert("numerator".into(), estimate.numerator);
    rec.metrics.insert("denominator".into(), estimate.denominator);
    match &sandwich {
        Some(s) => {
            println!(
                "L2: mmse = {} ({}), scaled = {} ({}), base = {} ({})",
                s.l2_mmse.value,
                s.l2_mmse.stderr,
                s.l2_scaled.value,
                s.l2_scaled.stderr,
                s.l2_base.value,
                s.l2_base.stderr
            );
            println!("sandwich: {}", if s.pass() { "pass" } else { "FAIL" });
            for (metric, v) in [
                ("l2_mmse", s.l2_mmse.value),
                ("l2_scaled", s.l2_scaled.value),
                ("l2_base", s.l2_base.value),
                ("sandwich_pass", if s.pass() { 1.0 } else { 0.0 }),
            ] {
                rec.metrics.insert(metric.into(), v);
            }
        }
        None => println!("sandwich: skipped (denominator >= 0, delta_opt undefined)"),
    }

    let outputs = write_outputs(&out, "delta-opt", std::slice::from_ref(&rec), seed, false)?;
    let manifest_path = out.join("delta-opt.manifest.json");
    RunManifest {
        command: "delta-opt".into(),
        config_path: Some(path.clone()),
        resolved_spec: serde_json::to_value(&spec).map_err(Error::from)?,
        seed,
        workers,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at,
        outputs: outputs.clone(),
    }
    .write(&manifest_path)
    .map_err(io_failure(&manifest_path))?;
    println!("wrote {} and {}", outputs[0].display(), manifest_path.display());
    Ok(())
}

fn cmd_selftest(score_bias: f64) -> CliResult<()> {
    let outcomes = run_selftest(&SelftestOptions { score_bias });
    for c in &outcomes {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("selftest failed: {}", failed.join(", ")) })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::DeltaOpt => cmd_delta_opt(&cli),
        Command::Run { name, config_file, record_runtime } => {
            cmd_run(&cli, name, config_file.as_ref(), *record_runtime)
        }
        Command::Selftest { inject_score_bias } => cmd_selftest(*inject_score_bias),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
