//! `eegshield`: generate user-wise perturbations for EEG datasets and check
//! that they make user identity unlearnable while the task stays learnable.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "eegshield",
    version,
    about,
    args_conflicts_with_subcommands = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset bundle.
    Synth(commands::SynthArgs),
    /// Perturb the training split of a dataset bundle.
    Generate(commands::GenerateArgs),
    /// Train a classifier and score it on clean test data.
    Train(commands::TrainArgs),
    /// Score a saved classifier on a dataset bundle.
    Eval(commands::EvalArgs),
    /// Sweep adversarial-training ε and training-time transforms.
    Robustness(commands::RobustnessArgs),
    /// Render SVG charts (and a summary) from a results directory.
    Report(commands::ReportArgs),
    /// Run a full experiment matrix from a config document.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results directory for report.csv, report.json and plots/.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override `n_repeats` from the config.
    #[arg(long)]
    n_repeats: Option<usize>,
    /// Override `base_seed` from the config.
    #[arg(long)]
    base_seed: Option<u64>,
    /// Print the default config document and exit.
    #[arg(long)]
    print_default_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Some(Command::Synth(a)) => commands::synth(&a),
        Some(Command::Generate(a)) => commands::generate(&a),
        Some(Command::Train(a)) => commands::train(&a),
        Some(Command::Eval(a)) => commands::eval(&a),
        Some(Command::Robustness(a)) => commands::robustness(&a),
        Some(Command::Report(a)) => commands::report(&a),
        Some(Command::Run(a)) => commands::run(&a),
        None if cli.run.config.is_some() || cli.run.print_default_config => commands::run(&cli.run),
        None => {
            use clap::CommandFactory;
            let _ = Cli::command().print_help();
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
