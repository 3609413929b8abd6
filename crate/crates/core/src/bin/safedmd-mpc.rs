use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safedmd_mpc::harness::{run_stage, ControllerKind, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(version, about = "SafEDMD surrogates, terminal ingredients and MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample snapshot data for every constant input
    GenerateData(Common),
    /// Fit the bilinear surrogate
    Fit(Common),
    /// Estimate and validate the error-bound constants
    Bounds(Common),
    /// Synthesize terminal cost, region and controller
    Synthesize(Common),
    /// Re-verify the terminal ingredients on fresh samples
    Verify(Common),
    /// Closed-loop simulation of the configured controller
    Simulate(Common),
    /// Configured SafEDMD controller against L-MPC
    Compare(Common),
    /// Whole pipeline with the full artifact bundle
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// JSON or TOML experiment file; the pendulum benchmark when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// safedmd-mpc, dual-mode, lmpc or terminal-only
    #[arg(long)]
    controller: Option<ControllerKind>,
}

fn load(c: &Common) -> safedmd_mpc::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::pendulum_benchmark(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(k) = c.controller {
        cfg.controller = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::GenerateData(c) => (Stage::GenerateData, c),
        Command::Fit(c) => (Stage::Fit, c),
        Command::Bounds(c) => (Stage::Bounds, c),
        Command::Synthesize(c) => (Stage::Synthesize, c),
        Command::Verify(c) => (Stage::Verify, c),
        Command::Simulate(c) => (Stage::Simulate, c),
        Command::Compare(c) => (Stage::Compare, c),
        Command::Run(c) => (Stage::Run, c),
    };
    let result = load(common).and_then(|cfg| {
        run_stage(&cfg, stage)?;
        Ok(cfg)
    });
    match result {
        Ok(cfg) => {
            log::info!("{stage:?} finished; artifacts in {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
