//! Command-line front end: simulate data, estimate cutoff effects and
//! structural parameters, fit turnout, extrapolate away from the cutoff and
//! reproduce the simulation tables.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error. Errors
//! are reported as JSON on stderr.

mod artifacts;
mod config;
mod pipeline;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use artifacts::{Artifacts, Meta};
use config::{resolve, validate, ConfigError, FieldError, Preset, RunConfig};
use pipeline::ParameterSummary;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error")]
    Config(ConfigError),
    #[error("{stage}: {message}")]
    Runtime { stage: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn stage(stage: &str, e: impl Display) -> Self {
        CliError::Runtime { stage: stage.into(), message: e.to_string() }
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(c) => serde_json::json!({ "error": { "kind": c.kind, "errors": c.errors } }),
            CliError::Runtime { stage, message } => serde_json::json!({ "error": { "kind": "runtime", "stage": stage, "message": message } }),
            CliError::Io { path, message } => serde_json::json!({ "error": { "kind": "io", "path": path, "message": message } }),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sxrd", version, about = "Cutoff estimation and structural extrapolation for spending referenda")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; fields not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "sxrd-out")]
    out: PathBuf,
    /// Master seed (overrides the configuration file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scale preset applied beneath the configuration file.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Simulate the narrow-proposal referendum dataset.
    Simulate,
    /// Cutoff effects of approval and their first-stage rescaling.
    EstimateRdd,
    /// Structural preference and housing-supply estimates.
    Identify,
    /// Turnout parameters given structural estimates.
    FitTurnout,
    /// Binned average arc elasticities away from the cutoff.
    Extrapolate,
    /// Run identification, turnout and extrapolation and compare to truths.
    ReproduceTables,
    /// Check a configuration without running anything.
    ValidateConfig,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::EstimateRdd => "estimate-rdd",
            Command::Identify => "identify",
            Command::FitTurnout => "fit-turnout",
            Command::Extrapolate => "extrapolate",
            Command::ReproduceTables => "reproduce-tables",
            Command::ValidateConfig => "validate-config",
        }
    }

    fn needs_identification(self) -> bool {
        !matches!(self, Command::Simulate | Command::EstimateRdd)
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
            CliError::Config(ConfigError { kind: "parse", errors: vec![FieldError { path: p.display().to_string(), message: e.to_string() }] })
        })?),
        None => None,
    };
    resolve(text.as_deref(), cli.preset, cli.seed).map_err(CliError::Config)
}

#[derive(Debug, Serialize)]
struct Delta {
    parameter: String,
    truth: f64,
    estimate: Option<f64>,
    delta: Option<f64>,
}

fn deltas(rows: &[ParameterSummary]) -> Vec<Delta> {
    rows.iter().map(|r| Delta { parameter: r.parameter.clone(), truth: r.truth, estimate: r.mean, delta: r.bias }).collect()
}

fn reproduce(config: &RunConfig, out: &Artifacts) -> Result<(), CliError> {
    let table2 = pipeline::run_identify(config, out)?;
    let table3 = pipeline::run_fit_turnout(config, out)?;
    let figure = pipeline::run_extrapolate(config, out)?;
    let margins: Vec<f64> = figure.margin_by_grid.iter().flatten().copied().collect();
    let violations = margins.windows(2).filter(|w| w[1] >= w[0]).count();
    let zero = sxrd::extrap::AveCurve::bin_of(config.extrap.bin_width, 0.0);
    let right: Vec<Option<f64>> = (zero..(zero + 4).min(figure.ave.mean.len())).map(|b| figure.ave.mean[b]).collect();
    let summary = serde_json::json!({
        "structural": deltas(&table2),
        "max_abs_structural_delta": table2.iter().filter_map(|r| r.bias).fold(0.0f64, |m, b| m.max(b.abs())),
        "turnout": deltas(&table3),
        "extrapolation": {
            "margin_decreasing_violations": violations,
            "margin_pairs": margins.len().saturating_sub(1),
            "ave_right_of_cutoff": right,
            "ave_positive_right_of_cutoff": right.iter().all(|v| v.is_some_and(|x| x > 0.0)),
        },
    });
    out.json("summary.json", &summary)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load(cli)?;
    let errors = validate(&config, cli.command.needs_identification());
    if cli.command == Command::ValidateConfig {
        let report = serde_json::json!({ "valid": errors.is_empty(), "errors": errors, "config_hash": config.hash() });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return if errors.is_empty() { Ok(()) } else { Err(CliError::Config(ConfigError { kind: "validation", errors })) };
    }
    if !errors.is_empty() {
        return Err(CliError::Config(ConfigError { kind: "validation", errors }));
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::stage("threads", e))?;
    }
    let meta = Meta { command: cli.command.name().into(), config_hash: config.hash(), seed: config.seed_or_zero(), version: env!("CARGO_PKG_VERSION") };
    let out = Artifacts::new(&cli.out, meta).map_err(|e| match e {
        CliError::Io { path, message } => CliError::Config(ConfigError { kind: "validation", errors: vec![FieldError { path: format!("out ({path})"), message }] }),
        other => other,
    })?;
    out.config(&config)?;
    match cli.command {
        Command::Simulate => pipeline::run_simulate(&config, &out),
        Command::EstimateRdd => pipeline::run_estimate_rdd(&config, &out),
        Command::Identify => pipeline::run_identify(&config, &out).map(|_| ()),
        Command::FitTurnout => pipeline::run_fit_turnout(&config, &out).map(|_| ()),
        Command::Extrapolate => pipeline::run_extrapolate(&config, &out).map(|_| ()),
        Command::ReproduceTables => reproduce(&config, &out),
        Command::ValidateConfig => unreachable!("handled above"),
    }?;
    eprintln!("{}: wrote artifacts to {} (config {})", out.meta().command, cli.out.display(), &out.meta().config_hash[..12]);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
