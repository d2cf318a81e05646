use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use maxlink_sim::sweep::{emit, parse_config, run_sweep, CliArgs};

fn run() -> Result<()> {
    let args = CliArgs::parse();
    let (spec, output) = parse_config(&args)?;
    let timer = Instant::now();
    let rows = run_sweep(&spec, output.jobs)?;
    emit(&spec, &rows, output.format, output.out.as_deref())
        .with_context(|| format!("writing results to {}", output.out.as_ref().map_or("stdout".into(), |p| p.display().to_string())))?;
    eprintln!("{} cells in {:.3?}", rows.len(), timer.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
