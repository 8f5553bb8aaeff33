use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "granola", version, about = "Run graph-normalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate one configured model.
    Run {
        /// Experiment config, `.toml` or `.json`.
        config: PathBuf,
        /// Results JSON path; overrides `output` in the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the property suites and print a pass/fail table.
    Props {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Options file with `eps` and `seed`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a generated graph as JSON.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
        #[arg(short, long, global = true)]
        out: Option<PathBuf>,
    },
    /// Time forward+backward passes on random graphs of the given sizes.
    Bench {
        #[arg(required = true)]
        sizes: Vec<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare autodiff gradients of a configured model with central differences.
    Gradcheck {
        config: PathBuf,
        /// Graphs of the task used in the check.
        #[arg(long, default_value_t = 4)]
        graphs: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum GenKind {
    /// Circular skip-link graph.
    Csl { n: usize, skip: usize },
    Cycle { n: usize },
    Path { n: usize },
    Star { n: usize },
    /// Erdos-Renyi G(n, p).
    Er {
        n: usize,
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => commands::run(&config, out),
        Command::Props { suite, config, eps, seed } => commands::props(&suite, config.as_deref(), eps, seed),
        Command::Gen { kind, out } => commands::generate(kind, out.as_deref()),
        Command::Bench { sizes, out, reps, seed } => commands::bench(&sizes, out.as_deref(), reps, seed),
        Command::Gradcheck { config, graphs, tol } => commands::gradcheck(&config, graphs, tol),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
