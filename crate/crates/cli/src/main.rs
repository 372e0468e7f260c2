use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpg_cli::{cmd_eval, cmd_inspect, cmd_report, cmd_run, EvalData};

/// Sequential-task continual learning: one shared parameter store, per-task
/// weight ownership, learnable picking masks, gradual pruning, and bounded
/// growth.
#[derive(Parser)]
#[command(name = "cpg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full sequential experiment from a config file.
    Run {
        /// Flat key-value config file (`key = value`, `#` comments).
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate one committed task from a checkpoint on external data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task id (1-based commit order).
        #[arg(long)]
        task: u16,
        #[command(flatten)]
        data: EvalArgs,
    },
    /// Write the report CSV recorded in a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print ledger and mask statistics for a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true)]
struct EvalArgs {
    /// CSV file with float feature columns and a `label` column.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    data: Option<PathBuf>,
    /// IDX image file (requires --labels).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file (requires --images).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config, &mut stdout),
        Command::Eval {
            checkpoint,
            task,
            data,
        } => {
            let eval_data = match (data.data, data.images, data.labels) {
                (Some(path), _, _) => EvalData::Csv(path),
                (None, Some(images), Some(labels)) => EvalData::Idx { images, labels },
                _ => unreachable!("clap enforces the data group"),
            };
            cmd_eval(&checkpoint, task, &eval_data, &mut stdout)
        }
        Command::Report { checkpoint, out } => cmd_report(&checkpoint, &out, &mut stdout),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint, &mut stdout),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
