use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use engagekit::cli::{run, Command, RunConfig};

/// Engagement modeling pipeline.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match execute(args) {
        Ok(written) => {
            for name in written {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: Args) -> engagekit::Result<Vec<String>> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p, std::env::vars())?,
        None => RunConfig::from_toml_with_env("", std::env::vars())?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("engagekit-out"));
    run(args.command, cfg, &out)
}
