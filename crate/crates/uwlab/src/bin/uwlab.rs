//! Experiment driver. Every subcommand reads its section of one declarative
//! JSON plan file and writes CSV tables, checkpoints, dataset recipes, and
//! `<name>.run.json` reproduction metadata into the output directory.
//!
//! The plan-file schema is documented in the repository README; the library
//! module `uwlab::sim::plan` defines it. Worker count for Monte-Carlo sweeps
//! comes from the `UWLAB_WORKERS` environment variable (default: all cores).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uwlab::sim::plan::{run_command, Command as PlanCommand, ExperimentPlan};

#[derive(Parser)]
#[command(
    name = "uwlab",
    version,
    about = "Unique-word OFDM data-estimation experiments: model-based \
             equalizers, trainable detectors, coded and uncoded Monte-Carlo \
             sweeps, and diagnostic analyses",
    after_help = "Results are reproducible: a plan file plus its seeds \
                  determines every emitted byte. Set UWLAB_WORKERS to pin \
                  the sweep worker count."
)]
struct Cli {
    /// Declarative plan file (JSON); each subcommand runs its own section.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory receiving every output file (created if missing).
    #[arg(short, long, global = true, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Run only the job with this name inside the chosen section.
    #[arg(long, global = true, value_name = "NAME")]
    only: Option<String>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo bit-error-rate sweep over an E_b/N_0 grid
    Simulate,
    /// Fit a trainable detector and save its checkpoint
    Train,
    /// Build a training-set recipe and save it
    BuildDataset,
    /// Bin predicted LLRs against empirical error rates
    LlrCalib,
    /// Conditional I/Q histogram of one estimator's outputs
    IqHist,
    /// Closed-form multiplication counts for every estimator
    Complexity,
    /// Decision map of an estimator on the 2-D toy channel
    Boundary,
}

impl Cmd {
    fn plan_command(&self) -> PlanCommand {
        match self {
            Cmd::Simulate => PlanCommand::Simulate,
            Cmd::Train => PlanCommand::Train,
            Cmd::BuildDataset => PlanCommand::BuildDataset,
            Cmd::LlrCalib => PlanCommand::LlrCalib,
            Cmd::IqHist => PlanCommand::IqHist,
            Cmd::Complexity => PlanCommand::Complexity,
            Cmd::Boundary => PlanCommand::Boundary,
        }
    }
}

fn run(cli: &Cli) -> uwlab::Result<()> {
    let config = cli.config.as_deref().ok_or_else(|| {
        uwlab::Error::InvalidConfig(
            "pass --config <plan.json>; the README documents the schema".into(),
        )
    })?;
    let plan = ExperimentPlan::load(config)?;
    let artifacts = run_command(
        &plan,
        cli.command.plan_command(),
        cli.only.as_deref(),
        &cli.out_dir,
    )?;
    for a in &artifacts {
        if a.summary.contains('\n') {
            println!("{}:", a.name);
            for line in a.summary.lines() {
                println!("  {line}");
            }
        } else {
            println!("{}: {}", a.name, a.summary);
        }
        for f in &a.files {
            println!("  wrote {}", f.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
