//! Command-line front end: scenario orchestration over the solve,
//! classify, trace, check and dimension stages.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use parobs_cli::config::{self, StageKind};
use parobs_cli::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "parobs",
    about = "Parabolic obstacle problem laboratory: solve, classify free-boundary \
             points, sweep Gaussian monotonicity functionals, estimate the \
             parabolic dimension of the singular set"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for trace/check/dimension jobs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the scenario resolution h.
    #[arg(long, global = true)]
    resolution: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver and dump the field.
    Solve,
    /// Solve, classify free-boundary points and sweep the functionals.
    Analyze,
    /// Full verification: analyze plus every enabled check.
    Verify,
    /// Solve, classify and estimate the singular-set dimension.
    Dimension,
    /// Every stage in the configured pipeline.
    All,
}

fn stages_for(command: &Command) -> Vec<StageKind> {
    match command {
        Command::Solve => vec![StageKind::Solve],
        Command::Analyze => vec![StageKind::Solve, StageKind::Classify, StageKind::Trace],
        Command::Verify => vec![
            StageKind::Solve,
            StageKind::Classify,
            StageKind::Trace,
            StageKind::Checks,
        ],
        Command::Dimension => vec![
            StageKind::Solve,
            StageKind::Classify,
            StageKind::Dimension,
        ],
        Command::All => vec![
            StageKind::Solve,
            StageKind::Classify,
            StageKind::Trace,
            StageKind::Checks,
            StageKind::Dimension,
        ],
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("parobs: one or more enabled checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("parobs: error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let config_path = cli
        .config
        .as_ref()
        .context("--config PATH is required")?;
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config = config::parse_config(&text)?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let stages = stages_for(&cli.command);

    let outcome = pipeline::run(&config, &stages, &out_dir, cli.resolution)?;
    for notice in &outcome.report.notices {
        eprintln!("parobs: notice: {notice}");
    }
    for check in &outcome.report.checks {
        eprintln!(
            "parobs: check {:<22} fitted {:>12.5e}  limit {:>12.5e}  {}",
            check.name,
            check.fitted_constant,
            check.limit,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    eprintln!(
        "parobs: artifacts in {} ({} files)",
        out_dir.display(),
        outcome.report.manifest.len()
    );
    Ok(!outcome.checks_ran || outcome.all_checks_passed)
}
