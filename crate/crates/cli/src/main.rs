//! `replysent`: train, auto-label, evaluate and predict from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use replysent_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "replysent", version, about = "Predict the predominant sentiment of replies to a tweet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file with flat keys.
    #[arg(long, env = "REPLYSENT_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed; all sub-seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-key override, e.g. `--set max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage2Model {
    Bilstm,
    Cnn,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train the message-level classifier on `labeled_path`.
    TrainBase(Common),
    /// Label the source tweets of `threads_path` from their replies.
    Autolabel {
        #[command(flatten)]
        common: Common,
        /// Message-level checkpoint [default: <out>/stage1.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train reply-sentiment classifiers on an auto-labeled corpus.
    TrainReply {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        model: Stage2Model,
    },
    /// Score one checkpoint, or the average of two, against gold data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; pass twice for an ensemble.
        #[arg(long = "checkpoint", required = true, num_args = 1)]
        checkpoints: Vec<PathBuf>,
        /// Treat the checkpoint as a message-level model applied to source
        /// text (the direct baseline).
        #[arg(long)]
        direct: bool,
        /// Evaluate on a labeled corpus instead of `gold_path` threads.
        #[arg(long)]
        labeled: Option<PathBuf>,
    },
    /// Print `label p_neg p_neu p_pos` for each input text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text to classify. Repeatable.
        #[arg(long, conflicts_with = "file")]
        text: Vec<String>,
        /// File with one text per line.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run both stages and all evaluations end to end.
    Run(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                // Wrapped errors already print their cause inline.
                if !msg.ends_with(&s.to_string()) {
                    msg.push_str(&format!("\n  caused by: {s}"));
                }
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
