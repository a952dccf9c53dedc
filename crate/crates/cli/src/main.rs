use std::path::PathBuf;
use std::process::ExitCode;

use bvld_cli::{run, CliError, RunConfig, EXIT_OK};
use clap::Parser;

/// Bregman variational dynamics: solve, simulate and verify.
#[derive(Debug, Parser)]
#[command(name = "bvld", version)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; files are written as <prefix>.<kind>.<ext>.
    #[arg(long)]
    out: Option<String>,
    /// Suppress the summary on standard output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("bvld: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    let prefix = PathBuf::from(cfg.out.clone().unwrap_or_else(|| "bvld".into()));
    let outcome = run(&cfg, &prefix)?;
    for w in &outcome.warnings {
        eprintln!("bvld: warning: {w}");
    }
    if !args.quiet {
        println!("{}", outcome.summary.trim_end());
        for f in &outcome.files {
            println!("wrote {f}");
        }
    }
    Ok(())
}
