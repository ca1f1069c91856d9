//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fingerspell::config::RunConfig;
use fingerspell::error::Error;
use fingerspell::fileio;
use fingerspell::synthgen;
use fingerspell::train;
use fingerspell::TrainScalar;

#[derive(Parser)]
#[command(name = "fingerspell", version, about = "Fingerspelling sequence recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write best/last checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        val_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a checkpoint on a manifest and print the per-sample report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Prefix beam width (greedy decoding when absent).
        #[arg(long)]
        beam: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Decode a single clip file and print the recognized string.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate a synthetic dataset (clips plus train/test manifests).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training samples to generate.
        #[arg(long, default_value_t = 300)]
        n_train: usize,
        /// Test samples to generate.
        #[arg(long, default_value_t = 50)]
        n_test: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            train_manifest,
            val_manifest,
            out,
            seed,
        } => {
            let mut run = RunConfig::from_file(&config)?;
            if let Some(s) = seed.seed {
                run.train.seed = s;
            }
            let outcome =
                train::train::<TrainScalar>(&run, &train_manifest, &val_manifest, Some(&out))?;
            for h in &outcome.history {
                println!(
                    "epoch {:>3}  train_loss {:>10.6}  val_letter_accuracy {:.6}",
                    h.epoch, h.train_loss, h.val_accuracy
                );
            }
            println!(
                "best checkpoint: epoch {} (letter accuracy {:.6}) -> {}",
                outcome.best.epoch,
                outcome.best_accuracy,
                out.join("best.ckpt").display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            beam,
            seed: _,
        } => {
            let ck = fileio::read_checkpoint::<TrainScalar>(&checkpoint)?;
            let (model, run) = train::model_from_checkpoint(&ck, &checkpoint)?;
            let report = train::evaluate(&model, &run.input, &manifest, beam)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            input,
            beam,
            seed: _,
        } => {
            let ck = fileio::read_checkpoint::<TrainScalar>(&checkpoint)?;
            let (model, run) = train::model_from_checkpoint(&ck, &checkpoint)?;
            let text = train::predict(&model, &run.input, &input, beam)?;
            println!("{text}");
            Ok(())
        }
        Command::Synth {
            config,
            out,
            n_train,
            n_test,
            seed,
        } => {
            let run = RunConfig::from_file(&config)?;
            let mut synth = run.synth.clone();
            if let Some(s) = seed.seed {
                synth.seed = s;
            }
            let paths = synthgen::generate_dataset(&synth, n_train, n_test, &out)?;
            println!("wrote {}", paths.train_manifest.display());
            println!("wrote {}", paths.test_manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
