//! Command-line entry points: run and sweep episodes, validate scenarios,
//! serve sessions.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use realign::diagnosis::AlignmentPolicy;
use realign::episode::{run_episode, EpisodeOptions};
use realign::report::{emit_report, write_metrics_csv, EpisodeReport, Outcome};
use realign::scenario::Scenario;
use realign::session::{SessionMode, SessionParams};

use crate::server::{serve, ServerConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;

/// Environment variable holding the log filter, e.g. `debug` or `realign=trace`.
pub const LOG_ENV: &str = "REALIGN_LOG";

#[derive(Debug, Parser)]
#[command(name = "realign", version, about = "Run, sweep and serve feature-realignment episodes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode against the simulated human and write its report.
    Run(RunArgs),
    /// Run every scenario in a directory in parallel.
    Sweep(SweepArgs),
    /// Check a scenario file against the schema.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Serve sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Also write the metrics table here.
    #[arg(long)]
    pub metrics_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Overrides {
    /// Replace the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `permissive` or `conservative`.
    #[arg(long)]
    pub policy: Option<AlignmentPolicy>,
    /// Apply every correction with the plain update, skipping detection.
    #[arg(long)]
    pub force_naive_update: bool,
    /// Correction budget for the episode.
    #[arg(long)]
    pub steps: Option<usize>,
}

impl Overrides {
    pub fn options(&self) -> EpisodeOptions {
        EpisodeOptions {
            seed: self.seed,
            policy: self.policy,
            force_naive_update: self.force_naive_update,
            budget: self.steps,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of scenario files.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Directory for the reports and `metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080", env = "REALIGN_BIND")]
    pub bind: SocketAddr,
    /// Directory with the UI bundle, served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "live")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = SessionParams::default().max_drag_torque)]
    pub max_drag_torque: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Oracle,
    Live,
}

impl From<ModeArg> for SessionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Oracle => SessionMode::Oracle,
            ModeArg::Live => SessionMode::Live,
        }
    }
}

/// Errors reading or checking a scenario are schema errors; the rest are not.
fn is_schema_error(e: &realign::Error) -> bool {
    !matches!(e, realign::Error::Io(_))
}

fn exit_for(e: &realign::Error) -> u8 {
    if is_schema_error(e) {
        EXIT_SCHEMA
    } else {
        EXIT_FAILURE
    }
}

fn outcome_code(report: &EpisodeReport) -> u8 {
    match report.metrics.outcome {
        Some(Outcome::BudgetExhausted) => EXIT_BUDGET,
        _ => EXIT_OK,
    }
}

/// Loads a scenario and runs it with the overrides applied.
pub fn run_scenario(path: &Path, overrides: &Overrides) -> Result<EpisodeReport, (u8, String)> {
    let scenario = Scenario::load(path).map_err(|e| (exit_for(&e), format!("{}: {e}", path.display())))?;
    let scenario = overrides.options().apply(&scenario);
    scenario
        .validate()
        .map_err(|e| (EXIT_SCHEMA, format!("{}: {e}", path.display())))?;
    run_episode(&scenario).map_err(|e| (EXIT_FAILURE, format!("{}: {e}", path.display())))
}

pub fn run(args: &RunArgs) -> u8 {
    let report = match run_scenario(&args.scenario, &args.overrides) {
        Ok(r) => r,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    if let Err(e) = emit_report(&report, &args.out) {
        eprintln!("error: writing {}: {e}", args.out.display());
        return EXIT_FAILURE;
    }
    if let Some(path) = &args.metrics_csv {
        let written = std::fs::File::create(path)
            .map_err(realign::Error::from)
            .and_then(|f| report.write_csv(f));
        if let Err(e) = written {
            eprintln!("error: writing {}: {e}", path.display());
            return EXIT_FAILURE;
        }
    }
    println!(
        "{}: corrections {}, outcome {:?}",
        report.scenario,
        report.metrics.corrections,
        report.metrics.outcome.unwrap_or(Outcome::Converged)
    );
    outcome_code(&report)
}

pub fn sweep(args: &SweepArgs) -> u8 {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&args.scenarios) {
        Ok(dir) => dir
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            eprintln!("error: {}: {e}", args.scenarios.display());
            return EXIT_FAILURE;
        }
    };
    paths.sort();
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: {}: {e}", args.out.display());
        return EXIT_FAILURE;
    }
    let results: Vec<_> = paths
        .par_iter()
        .map(|p| (p, run_scenario(p, &args.overrides)))
        .collect();

    let mut code = EXIT_OK;
    let mut reports = Vec::new();
    for (path, result) in results {
        match result {
            Ok(report) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let out = args.out.join(format!("{stem}.report.json"));
                if let Err(e) = emit_report(&report, &out) {
                    eprintln!("error: writing {}: {e}", out.display());
                    code = code.max(EXIT_FAILURE);
                }
                code = code.max(outcome_code(&report));
                println!("{}: corrections {}", report.scenario, report.metrics.corrections);
                reports.push(report);
            }
            Err((c, msg)) => {
                eprintln!("error: {msg}");
                code = code.max(c);
            }
        }
    }
    let csv = args.out.join("metrics.csv");
    let written = std::fs::File::create(&csv)
        .map_err(realign::Error::from)
        .and_then(|f| write_metrics_csv(&reports, f));
    if let Err(e) = written {
        eprintln!("error: writing {}: {e}", csv.display());
        code = code.max(EXIT_FAILURE);
    }
    code
}

pub fn validate(path: &Path) -> u8 {
    match Scenario::load(path) {
        Ok(s) => {
            println!("{}: ok ({} features, budget {})", s.name, s.robot_features.len(), s.budget);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            exit_for(&e)
        }
    }
}

fn serve_command(args: &ServeArgs) -> u8 {
    let config = ServerConfig {
        defaults: SessionParams {
            mode: args.mode.into(),
            max_drag_torque: args.max_drag_torque,
        },
        static_dir: args.static_dir.clone(),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    match runtime.block_on(serve(args.bind, config)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn main_with(cli: Cli) -> ExitCode {
    let code = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Validate { scenario } => validate(scenario),
        Command::Serve(args) => serve_command(args),
    };
    ExitCode::from(code)
}
