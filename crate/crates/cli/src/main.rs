use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use sns_cli::commands::{error_exit_code, run, write_metadata, Command, RUNTIME_ERROR};
use sns_cli::config::ExperimentConfig;
use sns_cli::error::Result;

/// Stochastic Navier-Stokes coupling verification campaign.
///
/// Exit codes: 0 all pass, 1 inequality violation, 2 hypothesis failure, 3 runtime error.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(args: &Args) -> Result<u8> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| sns_cli::error::CliError::Config(e.to_string()))?;
    }
    let (mut cfg, base) = match &args.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(|d| d.to_path_buf()).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let start = Instant::now();
    let outcome = run(args.command, &cfg, &base, &args.out)?;
    let code = outcome.status.exit_code();
    write_metadata(&args.out, args.command, start.elapsed().as_secs_f64(), rayon::current_num_threads(), code)?;
    eprintln!("{}: {:?}", args.command.name(), outcome.status);
    Ok(code)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { RUNTIME_ERROR } else { 0 });
        }
    };
    match execute(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e))
        }
    }
}
