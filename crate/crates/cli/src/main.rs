use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fixtail_cli::{run, Command, Overrides, VERSION};

/// Tail-index solver, fixed-point sampler and tail certificates for
/// multivariate smoothing transforms.
#[derive(Debug, Parser)]
#[command(name = "fixtail", version = VERSION)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides the configuration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(config) = args.config else {
        eprintln!("fixtail {}: --config is required", args.command.name());
        return ExitCode::from(2);
    };
    let ov = Overrides {
        seed: args.seed,
        threads: args.threads,
        out: args.out,
    };
    ExitCode::from(run(args.command, &config, &ov) as u8)
}
