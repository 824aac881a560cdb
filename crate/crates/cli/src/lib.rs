//! Command implementations behind the `rbcert` binary.
//!
//! Outputs of `run` and `compare-ic` in the output directory:
//!
//! - `report.json`: `{"body": ..., "metadata": ...}`. The body is a pure
//!   function of the configuration and seed; wall-clock data lives in
//!   `metadata` only.
//! - `rb.csv`: columns `label, prior, posterior, rb_ratio, evidence,
//!   plausible` under the first configured prior.
//! - `plotdata/*.csv`: one file per plot panel.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rbcert::error::Error as CoreError;
use rbcert::rng::RNG_ALGORITHM;
use rbcert::scenarios::{run_scenario, PlotTable, RunBody, RunOptions, ScenarioConfig, ScenarioOutcome};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED_CHECKS: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "rbcert", version, about = "Relative-belief certification scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppresses the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulates the configured dataset and certifies it.
    Run { config: PathBuf },
    /// As `run`, adding AIC, BIC and any configured extra criterion.
    CompareIc { config: PathBuf },
    /// Runs the built-in invariant checks.
    Validate,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Solver(_) => EXIT_SOLVER,
            Self::Io(_) => EXIT_FAILED_CHECKS,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Solver(m) => write!(f, "solver failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Fixture(_) => Self::Config(e.to_string()),
            other => Self::Solver(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Parses and resolves a configuration file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.resolve().map_err(CliError::from)
}

#[derive(Debug, Serialize)]
struct Body<'a> {
    command: &'a str,
    counts_sha256: Option<String>,
    #[serde(flatten)]
    run: &'a RunBody,
}

#[derive(Debug, Serialize)]
struct FailedBody<'a> {
    command: &'a str,
    config: &'a ScenarioConfig,
    error: String,
}

#[derive(Debug, Serialize)]
struct Metadata {
    library_version: &'static str,
    rng_algorithm: &'static str,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Record<B: Serialize> {
    body: B,
    metadata: Metadata,
}

fn metadata(started: SystemTime, clock: Instant) -> Metadata {
    Metadata {
        library_version: env!("CARGO_PKG_VERSION"),
        rng_algorithm: RNG_ALGORITHM,
        started_unix_seconds: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    }
}

/// SHA-256 of the counts as little-endian `u64` words.
pub fn counts_digest(counts: &[u64]) -> String {
    let mut h = Sha256::new();
    for c in counts {
        h.update(c.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_table(path: &Path, table: &PlotTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(&table.header).map_err(|e| io_err(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_outputs(out: &Path, command: &str, outcome: &ScenarioOutcome, meta: Metadata) -> Result<(), CliError> {
    let plot = out.join("plotdata");
    fs::create_dir_all(&plot).map_err(|e| io_err(&plot, e))?;
    let body = Body { command, counts_sha256: outcome.counts.as_deref().map(counts_digest), run: &outcome.body };
    write_json(&out.join("report.json"), &Record { body, metadata: meta })?;
    if let Some(first) = outcome.tables.iter().find(|t| t.name.starts_with("rb_")) {
        write_table(&out.join("rb.csv"), first)?;
    }
    for t in &outcome.tables {
        write_table(&plot.join(format!("{}.csv", t.name)), t)?;
    }
    Ok(())
}

fn label(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
}

fn summary(outcome: &ScenarioOutcome) -> Vec<String> {
    let b = &outcome.body;
    let mut lines = vec![format!("scenario {} seed {}", b.config.scenario.name(), b.config.seed)];
    if let Some(d) = &b.dataset {
        lines.push(format!("dataset: {} copies over {} outcomes, {} settings", d.total, d.outcomes, d.settings));
    }
    for p in &b.certifications {
        let mut line = format!("{} prior: smallest plausible label {}", p.prior, label(p.report.d_rb));
        for (name, r) in &p.report.ic_results {
            line.push_str(&format!(", {name} picks {}", r.d_label));
        }
        if p.report.extend_recommended {
            line.push_str(" (only the largest label is plausible; extend the set)");
        }
        lines.push(line);
    }
    for c in &b.conservativeness {
        lines.push(format!(
            "N={}: P(d_RB >= d_AIC) = {}, P(d_RB >= d_BIC) = {}, eps_I = {}, eps_II = {}",
            c.n,
            c.aic_fraction,
            c.bic_fraction,
            label(c.mean_eps_i),
            label(c.mean_eps_ii)
        ));
    }
    for w in &b.warnings {
        lines.push(format!("warning: {w}"));
    }
    lines
}

/// Runs one scenario command and writes its outputs.
pub fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, compare_ic: bool) -> Result<Vec<String>, CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let cfg = load_config(config, seed)?;
    let command = if compare_ic { "compare-ic" } else { "run" };
    match run_scenario(&cfg, RunOptions { compare_ic }) {
        Ok(outcome) => {
            write_outputs(out, command, &outcome, metadata(started, clock))?;
            Ok(summary(&outcome))
        }
        Err(e) => {
            let err = CliError::from(e);
            fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
            let body = FailedBody { command, config: &cfg, error: err.to_string() };
            write_json(&out.join("report.json"), &Record { body, metadata: metadata(started, clock) })?;
            Err(err)
        }
    }
}

/// Runs the invariant suite; returns the report lines and whether all passed.
pub fn cmd_validate(out: Option<&Path>) -> Result<(Vec<String>, bool), CliError> {
    let checks = rbcert::validation::run_all();
    let lines = checks
        .iter()
        .map(|c| format!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
        .collect();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_json(&dir.join("validation.json"), &checks)?;
    }
    Ok((lines, checks.iter().all(|c| c.passed)))
}

/// Dispatches a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, &cli.out, cli.seed, false).map(|l| (l, true)),
        Command::CompareIc { config } => cmd_run(config, &cli.out, cli.seed, true).map(|l| (l, true)),
        Command::Validate => cmd_validate(Some(&cli.out)),
    };
    match result {
        Ok((lines, ok)) => {
            if !cli.quiet {
                lines.iter().for_each(|l| println!("{l}"));
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_FAILED_CHECKS
            }
        }
        Err(e) => {
            eprintln!("rbcert: {e}");
            e.exit_code()
        }
    }
}
