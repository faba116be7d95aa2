//! `icu`: train, evaluate and compare intra-class-uncertainty heads.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 configuration
//! error, 3 missing or unreadable data, 4 shape mismatch.

mod commands;
mod config;
mod failure;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{DatasetChoice, Globals};
use run::SplitName;

#[derive(Parser)]
#[command(
    name = "icu",
    version,
    about = "Gaussian classification heads with intra-class uncertainty margins"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// Evaluate on this CSV file instead of the config's data source.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Which split of the config's data source to use.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

impl From<DatasetArgs> for DatasetChoice {
    fn from(a: DatasetArgs) -> Self {
        DatasetChoice {
            csv: a.csv,
            split: a.split,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write train.csv and test.csv for the config's data source.
    GenData {
        /// Subsample the training split with this long-tail ratio.
        #[arg(long)]
        longtail: Option<f64>,
    },
    /// Train a model; writes metrics.csv, model.ckpt and resolved_config.json.
    Train,
    /// Accuracy of a checkpoint with all margins off; writes eval.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
    },
    /// Export embeddings.csv and class_params.csv for plotting.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Allow embedding dimensions other than 2.
        #[arg(long)]
        allow_highdim: bool,
    },
    /// Run every variant of the config's compare section over its seeds.
    Compare,
    /// Check every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Negate the ICU mean gradient to confirm the check can fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let result = match cli.command {
        Command::GenData { longtail } => commands::gen_data(&globals, longtail),
        Command::Train => commands::train(&globals),
        Command::Eval { checkpoint, data } => commands::eval(&globals, &checkpoint, &data.into()),
        Command::Embed {
            checkpoint,
            data,
            allow_highdim,
        } => commands::embed(&globals, &checkpoint, &data.into(), allow_highdim),
        Command::Compare => commands::compare(&globals),
        Command::Gradcheck {
            instances,
            inject_fault,
        } => commands::gradcheck(&globals, instances, inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
