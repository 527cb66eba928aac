use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regime_clt::runner::{self, Overrides, RunError, DEFAULT_OUT_DIR, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "regime-clt", version, about = "Run regime-switching CLT experiments from scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report, tables and manifest.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run every scenario in a directory and write a summary table.
    VerifyAll {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors are configuration errors, not bound violations
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            replicates,
            threads,
        } => {
            let overrides = Overrides { seed, replicates };
            match runner::run(&scenario, &out, overrides, threads) {
                Ok(outcome) => {
                    println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::VerifyAll { suite, out, threads } => match runner::verify_all(&suite, &out, threads) {
            Ok(summary) => {
                for row in &summary.rows {
                    println!("{:<40} {}", row.file, row.status);
                }
                println!("{} passed, {} failed", summary.passed(), summary.failed());
                ExitCode::from(summary.exit_code() as u8)
            }
            Err(e) => fail(&e),
        },
    }
}
