//! `screendual`: batch runs of the primal, dual, free-boundary and market tools.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 when a solver
//! stopped short of its target (artifacts are still written), 1 otherwise.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use run::Run;

#[derive(Parser)]
#[command(name = "screendual", version, about = "Monopolist nonlinear pricing on a square of types")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for absent keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WithField {
    #[command(flatten)]
    common: Common,
    /// Payoff field CSV (`x1,x2,value`) to use instead of solving the primal problem.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the profit functional over convex payoffs.
    SolvePrimal(Common),
    /// Assemble the candidate from the free-boundary system.
    SolveAnalytic(Common),
    /// Duality gap and slackness for a payoff.
    Certify(WithField),
    /// Primal, analytic and straight-boundary routes side by side.
    Compare(Common),
    /// Price menu, agent choices and profit replay.
    SimulateMarket(WithField),
    /// Straight-boundary ansatz and its matching defect.
    RcBaseline(Common),
    /// Contour and histogram data for plotting.
    ExportPlots(WithField),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolvePrimal(_) => "solve-primal",
            Command::SolveAnalytic(_) => "solve-analytic",
            Command::Certify(_) => "certify",
            Command::Compare(_) => "compare",
            Command::SimulateMarket(_) => "simulate-market",
            Command::RcBaseline(_) => "rc-baseline",
            Command::ExportPlots(_) => "export-plots",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SolvePrimal(c) | Command::SolveAnalytic(c) | Command::Compare(c) | Command::RcBaseline(c) => c,
            Command::Certify(f) | Command::SimulateMarket(f) | Command::ExportPlots(f) => &f.common,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli.command.common())?;
    let threads = screendual_core::parallel::init_from_env();
    let mut run = Run::new(cfg, cli.command.name(), threads)?;
    let outcome = match &cli.command {
        Command::SolvePrimal(_) => commands::solve_primal_cmd(&mut run),
        Command::SolveAnalytic(_) => commands::solve_analytic_cmd(&mut run),
        Command::Certify(f) => commands::certify_cmd(&mut run, f.field.as_deref()),
        Command::Compare(_) => commands::compare_cmd(&mut run),
        Command::SimulateMarket(f) => commands::simulate_market_cmd(&mut run, f.field.as_deref()),
        Command::RcBaseline(_) => commands::rc_baseline_cmd(&mut run),
        Command::ExportPlots(f) => commands::export_plots_cmd(&mut run, f.field.as_deref()),
    };
    match outcome {
        Ok(o) if o.converged => {
            run.finish("ok", 0)?;
            Ok(0)
        }
        Ok(_) => {
            run.finish("not_converged", 3)?;
            Ok(3)
        }
        Err(e) => {
            let code = exit_code(&e);
            run.note(format!("{e:#}"));
            run.finish("error", code)?;
            Err(e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<ConfigError>() || matches!(c.downcast_ref::<screendual_core::Error>(), Some(screendual_core::Error::Config(_)))) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
