use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kwl::pipeline::{run_file, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "kwl", version, about = "Kirchhoff-type problems with steep potential wells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by an INI config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `[output] directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, out, stage, threads } = Cli::parse().command;
    let summary = run_file(&config, &RunOptions { out, stage, threads });
    match &summary.error {
        Some(RunError::Config(e)) => eprintln!("{}:{e}", config.display()),
        Some(e) => eprintln!("error: {e}"),
        None => {}
    }
    for c in summary.failed_checks() {
        eprintln!("FAIL [{}] {}: {}", c.stage, c.name, c.detail);
    }
    if let Some(dir) = &summary.out_dir {
        println!(
            "{} checks, {} failed; artifacts in {}",
            summary.checks.len(),
            summary.failed_checks().count(),
            dir.display()
        );
    }
    ExitCode::from(summary.exit_code as u8)
}
