use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use chemoflow::cli_io::{diagnose_directory, load_config, oracle_compare, run_and_export};
use chemoflow::energy::random::inequality_suites;
use chemoflow::grid::make_grid;

#[derive(Parser)]
#[command(name = "chemoflow", version, about = "Keller-Segel minimizing-movement solver and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme from a JSON config and write its artifacts.
    Run { config: PathBuf },
    /// Check the Onofri, Carleman and BHN inequalities on seeded random inputs.
    CheckInequalities {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 8.0)]
        half_width: f64,
        #[arg(long, default_value_t = 64)]
        cells: usize,
    },
    /// Compare exact and entropic transport costs on random density pairs.
    OracleCompare {
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8.0)]
        half_width: f64,
    },
    /// Recompute the dissipation ledger from the snapshots of a run directory.
    Diagnose { dir: PathBuf },
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> anyhow::Result<ExitCode> {
    let ok = match Cli::parse().command {
        Command::Run { config } => {
            let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_and_export(&cfg)?;
            println!(
                "steps={} final_time={} telescoped_ok={} output={}",
                report.steps,
                report.final_time,
                report.ledger.telescoped_ok,
                cfg.output.directory.display()
            );
            if let Some(e) = &report.error {
                eprintln!("run aborted: {e}");
            }
            report.ok
        }
        Command::CheckInequalities { seed, count, half_width, cells } => {
            let report = inequality_suites(make_grid(half_width, cells)?, seed, count)?;
            print_json(&report)?;
            report.all_pass()
        }
        Command::OracleCompare { grid, pairs, seed, half_width } => {
            let report = oracle_compare(half_width, grid, pairs, seed)?;
            print_json(&report)?;
            true
        }
        Command::Diagnose { dir } => {
            let report = diagnose_directory(&dir)?;
            print_json(&report)?;
            report.telescoped_ok
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
