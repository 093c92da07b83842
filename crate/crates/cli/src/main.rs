use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gravity_cli::config::{Flags, RunConfig};
use gravity_cli::run::{self, RunLog};

#[derive(Parser, Debug)]
#[command(name = "gravity", version, about = "PPML gravity estimation and currency-union counterfactuals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the gravity model and write estimates.json (and event_study.csv).
    Estimate(Flags),
    /// Solve the union counterfactual and write counterfactual.json and attribution.csv.
    Simulate(Flags),
    /// Estimate, then simulate with the estimated union coefficient.
    Pipeline(Flags),
    /// Write a synthetic panel with known coefficients.
    Generate(Flags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (name, flags) = match &cli.command {
        Command::Estimate(f) => ("estimate", f),
        Command::Simulate(f) => ("simulate", f),
        Command::Pipeline(f) => ("pipeline", f),
        Command::Generate(f) => ("generate", f),
    };
    let cfg = match RunConfig::resolve(name, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let mut log = RunLog::default();
    let result = match name {
        "estimate" => run::run_estimate(&cfg, &mut log),
        "simulate" => run::run_simulate(&cfg, &mut log),
        "pipeline" => run::run_pipeline(&cfg, &mut log),
        _ => run::run_generate(&cfg, &mut log),
    }
    .and_then(|()| run::write_manifest(&cfg, &log));

    match result {
        Ok(()) => {
            if name != "generate" {
                run::write_diagnostics(&cfg.out, name, None, &log);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            run::write_diagnostics(&cfg.out, name, Some(&e), &log);
            ExitCode::FAILURE
        }
    }
}
