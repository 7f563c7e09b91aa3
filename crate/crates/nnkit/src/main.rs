use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nnkit::cli;

/// Train small convolutional networks and measure their adversarial
/// robustness, reproducibly from a single seed.
#[derive(Parser)]
#[command(name = "nnkit", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config file.
    Train {
        /// Path to the key=value experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report a stored model's clean accuracy on a dataset's validation split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset spec: synthetic:C:TRAIN:VAL:Y:X:NOISE, fmnist:DIR or cifar10:DIR.
        #[arg(long)]
        dataset: String,
        /// Evaluate only the first N images (0 = all).
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
    /// Attack a stored model and report per-epsilon robust accuracy.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Comma-separated clip bounds, e.g. 0.1,0.01,0.001,0.0001.
        #[arg(long)]
        epsilons: String,
        #[arg(long, default_value_t = 40)]
        iters: usize,
        /// Attack only the first N images (0 = all).
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report file (one record per epsilon); printed to stdout regardless.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate every layer backward and both losses against finite differences.
    Gradcheck,
    /// Dump composite training examples for inspection.
    Compose {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Pin the number of combined images (default: sampled per example).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Args) -> nnkit::Result<()> {
    match args.command {
        Command::Train { config, seed, out } => {
            cli::cmd_train(&config, seed, out)?;
            Ok(())
        }
        Command::Eval {
            model,
            dataset,
            count,
            seed,
            batch,
        } => {
            cli::cmd_eval(&model, &dataset, count, seed, batch)?;
            Ok(())
        }
        Command::Attack {
            model,
            dataset,
            epsilons,
            iters,
            count,
            batch,
            seed,
            out,
        } => {
            let eps: Vec<f64> = epsilons
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        nnkit::Error::Config(format!("epsilon '{v}' is not a number"))
                    })
                })
                .collect::<nnkit::Result<_>>()?;
            cli::cmd_attack(&model, &dataset, &eps, iters, count, batch, seed, out.as_deref())?;
            Ok(())
        }
        Command::Gradcheck => cli::cmd_gradcheck(),
        Command::Compose {
            dataset,
            count,
            seed,
            k,
            out,
        } => cli::cmd_compose(&dataset, count, seed, k, &out),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
