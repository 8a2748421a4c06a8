use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Train, evaluate and inspect multi-label chest X-ray classifiers.
#[derive(Debug, Parser)]
#[command(name = "xrf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synth` for the generated corpus, or a directory holding
    /// Data_Entry_2017.csv and images/.
    #[arg(long, default_value = "synth")]
    data: String,
    /// Output directory, created if absent.
    #[arg(long, env = "XRF_OUT")]
    out: PathBuf,
    /// Root seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to evaluate [default: <out>/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split to score: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes report.csv, best.ckpt, config.resolved and split.tsv.
    Train(RunArgs),
    /// Score a checkpoint; writes eval.csv, roc_<class>.csv and roc_summary.csv.
    Evaluate(EvalArgs),
    /// Write only the per-class ROC curves and roc_summary.csv.
    Roc(EvalArgs),
    /// Overlay the last-block attention of a transformer checkpoint on an image.
    Attend {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG to explain.
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long, env = "XRF_OUT")]
        out: PathBuf,
    },
    /// Write a synthetic dataset directory (PNG images plus label table).
    Synth {
        #[arg(long, env = "XRF_OUT")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args, true),
        Command::Roc(args) => commands::evaluate(&args, false),
        Command::Attend {
            checkpoint,
            image,
            alpha,
            out,
        } => commands::attend(&checkpoint, &image, alpha, &out),
        Command::Synth { out, count, size, seed } => commands::synth(&out, count, size, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
