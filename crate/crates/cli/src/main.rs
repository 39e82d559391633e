use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use randprune_cli::{cmd_compare, cmd_hist, cmd_run, expand_key_flags, CliError, RunOverrides};

#[derive(Parser)]
#[command(
    name = "randprune",
    version,
    about = "Randomized iterative magnitude pruning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment for every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed; repeat for several.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Threads for candidate scoring.
        #[arg(long)]
        parallel: Option<usize>,
        /// Write stage-start weights for `hist`.
        #[arg(long)]
        dump_weights: bool,
        /// Override a config key, e.g. `--set prune.n_candidates=4`. Any key
        /// can also be given directly, as `--prune.n_candidates 4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare final accuracies of two run directories.
    Compare { a: PathBuf, b: PathBuf },
    /// Histogram of dumped weight magnitudes at one stage, as CSV.
    Hist {
        run_dir: PathBuf,
        #[arg(long)]
        stage: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            parallel,
            dump_weights,
            set,
        } => cmd_run(
            &config,
            &RunOverrides {
                set,
                seeds,
                out,
                parallel,
                dump_weights,
            },
        ),
        Command::Compare { a, b } => {
            print!("{}", cmd_compare(&a, &b)?);
            Ok(())
        }
        Command::Hist {
            run_dir,
            stage,
            bins,
            seed,
        } => {
            print!("{}", cmd_hist(&run_dir, stage, bins, seed)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse_from(expand_key_flags(std::env::args()))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
