use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use diip::cli::{exit_code, run, Command};
use diip::config::RunConfig;

/// Blind restoration with a diffusion prior and self-supervised early stopping.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// train, degrade, restore, bench or report
    command: String,
    /// `key = value` settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting overrides as `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = args.command.parse::<Command>().and_then(|cmd| {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::new(),
        };
        cfg.apply_overrides(&args.overrides)?;
        run(cmd, &cfg)
    });
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
