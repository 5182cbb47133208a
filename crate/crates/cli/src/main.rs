//! `m2unet` command-line tool: segment, train, eval, inspect and bench.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "m2unet",
    version,
    about = "M2U-Net retinal vessel segmentation"
)]
struct Cli {
    /// Worker threads for operator parallelism (1 = deterministic single
    /// thread; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment one image: probability map, binary map and overlay.
    Segment(SegmentArgs),
    /// Train from scratch or from a pretrained encoder.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or saved predictions) on a dataset split.
    Eval(EvalArgs),
    /// Print the per-row parameter and multiply-add table.
    Inspect(InspectArgs),
    /// Time forward passes.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.5, conflicts_with = "optimal_from")]
    pub threshold: f64,
    /// Dataset directory whose pooled Dice-optimal threshold replaces
    /// --threshold.
    #[arg(long)]
    pub optimal_from: Option<PathBuf>,
    /// Zero-pad to the next multiple of 16 and crop the outputs back.
    #[arg(long)]
    pub pad: bool,
    /// Ground-truth mask: colours the overlay by TP/FP/FN and reports Dice.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory, or a dataset name under $M2U_DATA_ROOT.
    #[arg(long)]
    pub dataset: String,
    /// JSON file with training configuration overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub weights: Option<PathBuf>,
    /// Directory of saved probability maps named by image id.
    #[arg(long, conflicts_with = "weights")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// How cropped pixels enter AuC: score-zero or exclude.
    #[arg(long, default_value = "score-zero", value_parser = ["score-zero", "exclude"])]
    pub crop_mode: String,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Input resolution as HxW.
    #[arg(long, default_value = "544x544")]
    pub resolution: String,
    /// Expansion factor of the decoder bottlenecks.
    #[arg(long, default_value_t = 0.15)]
    pub t_decoder: f64,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Checkpoint to time; defaults to a seeded scratch initialisation.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value = "544x544")]
    pub resolution: String,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// CSV file for the statistics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Maps an error chain to the exit-code contract.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<m2unet::Error>() {
            return e.exit_code() as u8;
        }
        if let Some(e) = cause.downcast_ref::<commands::CliError>() {
            return e.code;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
