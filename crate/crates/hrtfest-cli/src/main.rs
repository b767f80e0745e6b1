//! End-to-end driver for HRTF estimation from reverberant binaural speech:
//! data preparation, score-prior training, task generation, posterior
//! inference, evaluation, and plotting.

mod config;
mod manifest;
mod plot;
mod stages;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hrtfest", about = "HRTF estimation pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// override the global seed (per-stage seeds are re-derived)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// apply the desk-scale budget overrides
    #[arg(long, global = true)]
    desk_scale: bool,
    /// proceed despite stale upstream artifacts; recompute existing results
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Cache HRTF features, normalization stats, and subject splits
    PrepareData,
    /// Train the score prior and save a checkpoint
    Train,
    /// Simulate rooms and render reverberant estimation tasks
    GenTasks,
    /// Run posterior inference on every task (resumes completed tasks)
    Estimate,
    /// Score estimates and baselines into a metric report
    Evaluate,
    /// Render comparison plots from the metric report
    Plot,
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::PrepareData => "prepare-data",
        Command::Train => "train",
        Command::GenTasks => "gen-tasks",
        Command::Estimate => "estimate",
        Command::Evaluate => "evaluate",
        Command::Plot => "plot",
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    std::fs::create_dir_all(&cfg.paths.root)?;
    match cli.command {
        Command::PrepareData => stages::cmd_prepare_data(&cfg, cli.force),
        Command::Train => stages::cmd_train(&cfg, cli.force),
        Command::GenTasks => stages::cmd_gen_tasks(&cfg, cli.force),
        Command::Estimate => stages::cmd_estimate(&cfg, cli.force),
        Command::Evaluate => stages::cmd_evaluate(&cfg, cli.force),
        Command::Plot => stages::cmd_plot(&cfg, cli.force),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let payload = serde_json::json!({
            "stage": stage_name(&cli.command),
            "error": format!("{e:#}"),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
