use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mdrate::{run, Invocation};

#[derive(Parser)]
#[command(version, about = "Moderate deviation rate functions for many-server queues")]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let a = Args::parse();
    let code = run(&Invocation { config: a.config, out: a.out, seed: a.seed, quiet: a.quiet });
    ExitCode::from(code as u8)
}
