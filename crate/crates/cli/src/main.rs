mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::Failure;
use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Train,
    Eval,
    Sample,
    Grid,
    ReducePsd,
    ReduceMps,
    Udisj,
    Bench,
}

/// Squared probabilistic circuits: training, inference and reductions.
#[derive(Debug, Parser)]
#[command(name = "pcsq", version)]
struct Args {
    command: Command,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run(args: &Args) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    for s in &args.set {
        cfg.apply(s)?;
    }
    std::fs::create_dir_all(&args.out)?;
    let out = args.out.as_path();
    match args.command {
        Command::Train => commands::train(&cfg, out),
        Command::Eval => commands::eval(&cfg, out),
        Command::Sample => commands::sample(&cfg, out),
        Command::Grid => commands::grid(&cfg, out),
        Command::ReducePsd => commands::reduce_psd(&cfg, out),
        Command::ReduceMps => commands::reduce_mps(&cfg, out),
        Command::Udisj => commands::udisj(&cfg, out),
        Command::Bench => commands::bench(&cfg, out),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pcsq: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
