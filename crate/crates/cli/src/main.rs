//! `kyle-infoacq`: figure data, experiment configs, Sinkhorn traces and
//! Monte Carlo runs.

mod config;
mod figures;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::ExperimentConfig;
use figures::{run_figure, FigureSettings};
use run::{run_config, run_simulation, run_sinkhorn, RunOutput, Status};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "kyle-infoacq", version, about = "Information acquisition in the continuous-time Kyle model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sinkhorn tolerance; overrides the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Signal quadrature points (Gauss-Hermite up to 1000, trapezoid above).
    #[arg(long, global = true)]
    quad: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce the data behind a figure (fig1..fig5, figB1..figB3).
    Figure { name: String },
    /// Run an experiment config.
    Run { config: PathBuf },
    /// Solve the multipliers only and write the residual trace.
    Sinkhorn { config: PathBuf },
    /// Monte Carlo simulation of the equilibrium.
    Simulate { config: PathBuf },
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    config: Option<&'a ExperimentConfig>,
    figure: Option<&'a figures::FigureOutput>,
    run: Option<&'a RunOutput>,
    wall_time_seconds: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<kyle_infoacq::Error>() {
        Some(kyle_infoacq::Error::Config(_)) => EXIT_CONFIG,
        Some(_) => EXIT_SOLVER,
        None => EXIT_CONFIG,
    }
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = tol;
    }
    if let Some(q) = cli.quad {
        cfg.solver.quad_points = Some(q);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        kyle_infoacq::Error::Config(format!("cannot create output directory {}: {e}", dir.display())).into()
    })
}

fn execute(cli: &Cli) -> anyhow::Result<Status> {
    let started = Instant::now();
    match &cli.command {
        Command::Figure { name } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
            let settings = FigureSettings {
                tol: cli.tol,
                quad: cli.quad,
                seed: cli.seed,
            };
            let fig = run_figure(name, &out, &settings)?;
            let manifest = Manifest {
                command: "figure",
                version: env!("CARGO_PKG_VERSION"),
                config: None,
                figure: Some(&fig),
                run: None,
                wall_time_seconds: started.elapsed().as_secs_f64(),
            };
            output::write_json(&fig.dir.join("manifest.json"), &manifest)?;
            eprintln!("wrote {} files to {}", fig.files.len(), fig.dir.display());
            Ok(Status::Success)
        }
        Command::Run { config } | Command::Sinkhorn { config } | Command::Simulate { config } => {
            let cfg = load(cli, config)?;
            let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            prepare(&out)?;
            let (name, result) = match &cli.command {
                Command::Run { .. } => ("run", run_config(&cfg, &out)?),
                Command::Sinkhorn { .. } => ("sinkhorn", run_sinkhorn(&cfg, &out)?),
                _ => ("simulate", run_simulation(&cfg, &out)?),
            };
            let manifest = Manifest {
                command: name,
                version: env!("CARGO_PKG_VERSION"),
                config: Some(&cfg),
                figure: None,
                run: Some(&result),
                wall_time_seconds: started.elapsed().as_secs_f64(),
            };
            output::write_json(&out.join("manifest.json"), &manifest)?;
            eprintln!("wrote {} files to {}", result.files.len(), out.display());
            Ok(result.status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Partial { failed, total }) => {
            eprintln!("warning: {failed} of {total} sweep points failed; see failures.json");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
