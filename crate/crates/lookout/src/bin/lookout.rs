use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use lookout::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let what = format!("{:?}", cli.command)
        .split_whitespace()
        .next()
        .unwrap_or("")
        .to_lowercase();
    match run(&cli).with_context(|| format!("{what} failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<lookout::Error>().map(exit_code).unwrap_or(3);
            ExitCode::from(code)
        }
    }
}
