//! `hmmfdr`: config-driven experiments on hidden Markov multiple testing.
//!
//! Exit codes: 0 when every invariant check passes, 1 when a check fails,
//! 2 for configuration or runtime errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::config::ExperimentConfig;
use crate::output::Artifacts;

#[derive(Parser)]
#[command(name = "hmmfdr", version, about = "Posterior inference and FDR testing for hidden Markov signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw hidden paths, noise and observations.
    Simulate(RunArgs),
    /// Posterior laws, odds and log FLR/LLR over the window.
    Posterior(RunArgs),
    /// Weak-signal derivatives of ln(FLR/LLR) at zero signal.
    Expand(RunArgs),
    /// Oracle FDR procedure with full against local likelihood ratios.
    Test(RunArgs),
    /// Contraction coefficients and Λ convergence traces.
    Diagnose(RunArgs),
    /// Monte Carlo brackets for the expectation identities.
    McVerify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Simulate(a) => ("simulate", a),
            Command::Posterior(a) => ("posterior", a),
            Command::Expand(a) => ("expand", a),
            Command::Test(a) => ("test", a),
            Command::Diagnose(a) => ("diagnose", a),
            Command::McVerify(a) => ("mc-verify", a),
        }
    }
}

/// `HMMFDR_THREADS` caps the worker pool. Results do not depend on it.
fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("HMMFDR_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("HMMFDR_THREADS = {v:?} is not a count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn execute(command: &Command) -> anyhow::Result<bool> {
    let (name, args) = command.parts();
    configure_threads()?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_dir = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let hash = cfg.hash();
    let run = Run::new(cfg, args.quiet)?;
    let mut out = Artifacts::create(&out_dir, &hash, run.cfg.seed)?;
    let checks = match command {
        Command::Simulate(_) => commands::run_simulate(&run, &mut out),
        Command::Posterior(_) => commands::run_posterior(&run, &mut out),
        Command::Expand(_) => commands::run_expand(&run, &mut out),
        Command::Test(_) => commands::run_test(&run, &mut out),
        Command::Diagnose(_) => commands::run_diagnose(&run, &mut out),
        Command::McVerify(_) => commands::run_mc_verify(&run, &mut out),
    }
    .with_context(|| format!("{name} failed"))?;
    let pass = out.summary(name, &run.metadata(), &checks)?;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{name}: {} (artifacts in {})", if pass { "all checks passed" } else { "checks failed" }, out.dir().display());
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
