//! Command-line entry point for the segmentation distillation pipeline.
//!
//! Exit codes: 0 success (including completed-stage no-ops), 1 config or
//! runtime failure, 2 missing dependency stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segdistill_cli::{cmd_ablate, run_stage, AblateAxis, RunConfig, Stage, StageError};

#[derive(Parser)]
#[command(
    name = "segdistill",
    about = "Train a multi-class segmenter from retrieval archives and saliency pseudo-masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run config TOML.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Re-run a completed stage, invalidating downstream stages.
    #[arg(long)]
    force: bool,

    /// Worker threads for stage-internal parallelism (0 = automatic).
    #[arg(long, default_value = "0")]
    workers: usize,

    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth(CommonArgs),
    /// Embed the collection and build per-category archives and groups.
    Retrieve(CommonArgs),
    /// Predict saliency pseudo-masks for every archive image.
    Pseudolabel(CommonArgs),
    /// Train per-group experts and regenerate refined masks.
    Experts(CommonArgs),
    /// Train the final multi-class segmenter on the pseudo-labels.
    Distill(CommonArgs),
    /// Evaluate the distilled model on the validation splits.
    Eval(CommonArgs),
    /// Run the pipeline once per value of one config axis.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,

        /// Axis to sweep: archive_size | n_max | k_groups.
        #[arg(long)]
        axis: String,

        /// Comma-separated values, e.g. "5,20,50,100".
        #[arg(long)]
        values: String,
    },
}

fn setup(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    if common.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers)
            .build_global()
            .ok();
    }
    RunConfig::load(&common.config, common.seed)
}

fn run(cli: Cli) -> Result<(), StageError> {
    let (common, stage) = match &cli.command {
        Command::Synth(c) => (c, Some(Stage::Synth)),
        Command::Retrieve(c) => (c, Some(Stage::Retrieve)),
        Command::Pseudolabel(c) => (c, Some(Stage::Pseudolabel)),
        Command::Experts(c) => (c, Some(Stage::Experts)),
        Command::Distill(c) => (c, Some(Stage::Distill)),
        Command::Eval(c) => (c, Some(Stage::Eval)),
        Command::Ablate { common, .. } => (common, None),
    };
    let config = setup(common).map_err(|e| StageError::Config(format!("{e:#}")))?;

    match (&cli.command, stage) {
        (Command::Ablate { axis, values, .. }, _) => {
            let axis = AblateAxis::parse(axis).map_err(|e| StageError::Config(e.to_string()))?;
            let values: Vec<usize> = values
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| StageError::Config(format!("bad --values: {e}")))?;
            let table = cmd_ablate(&config, axis, &values, common.force)?;
            println!("axis\t{}", table.axis);
            println!("value\tmiou_single\tmiou_multi\tmiou_all");
            for row in &table.rows {
                println!(
                    "{}\t{:.4}\t{}\t{:.4}",
                    row.value,
                    row.miou_single,
                    row.miou_multi
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    row.miou_all
                );
            }
            Ok(())
        }
        (_, Some(stage)) => {
            let outcome = run_stage(&config, stage, common.force)?;
            if outcome.ran {
                println!("stage {} complete", stage.name());
            } else {
                println!("stage {} already complete (no-op)", stage.name());
            }
            Ok(())
        }
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StageError::MissingDependency { stage }) => {
            eprintln!("error: missing dependency stage: {stage}");
            ExitCode::from(2)
        }
        Err(StageError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(StageError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
