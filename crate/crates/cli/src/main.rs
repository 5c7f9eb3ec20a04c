use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use transferbench_cli::{config::RunConfig, pipeline, report, verify};

/// Distortion-anchored transferability benchmark.
#[derive(Parser)]
#[command(name = "transferbench", version, about)]
struct Cli {
    /// Worker threads (also via TRANSFERBENCH_WORKERS); 0 = all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a full benchmark run from a config file.
    Run { config: PathBuf },
    /// Regenerate the markdown report of a completed run directory.
    Report { dir: PathBuf },
    /// Re-check invariants over the persisted tables of a run directory.
    Verify { dir: PathBuf },
}

// Exit codes: 0 ok, 1 validation error, 2 compute error.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = std::env::var("TRANSFERBENCH_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(cli.workers);
    if workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("warning: could not size worker pool: {e}");
        }
    }
    match cli.command {
        Command::Run { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config: {e:#}");
                    return ExitCode::from(1);
                }
            };
            match pipeline::run(&cfg) {
                Ok(outcome) => {
                    if outcome.executed.is_empty() {
                        println!("all stages current; nothing recomputed");
                    } else {
                        println!("computed stages: {}", outcome.executed.join(", "));
                    }
                    println!("run directory: {}", cfg.output.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Report { dir } => match pipeline::load_artifacts(&dir) {
            Ok(artifacts) => match report::write_report(&artifacts) {
                Ok(path) => {
                    println!("report written to {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("report failed: {e:#}");
                    ExitCode::from(2)
                }
            },
            Err(e) => {
                eprintln!("cannot load run directory: {e:#}");
                ExitCode::from(1)
            }
        },
        Command::Verify { dir } => match verify::verify(&dir) {
            Ok(problems) if problems.is_empty() => {
                println!("verify: all invariants hold");
                ExitCode::SUCCESS
            }
            Ok(problems) => {
                for p in &problems {
                    eprintln!("verify: {p}");
                }
                eprintln!("verify: {} problem(s)", problems.len());
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("verify could not run: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
