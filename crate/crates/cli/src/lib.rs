//! Configuration-driven driver for the `fixtail` library. Every command reads
//! one JSON run configuration and writes stamped JSON and CSV artifacts to
//! the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use fixtail::Error;

pub const VERSION: &str = env!("FIXTAIL_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Validate,
    Spectrum,
    SolveIndex,
    Simulate,
    Tails,
    Certificate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Spectrum => "spectrum",
            Command::SolveIndex => "solve-index",
            Command::Simulate => "simulate",
            Command::Tails => "tails",
            Command::Certificate => "certificate",
        }
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::ValidationFailed(_) => 3,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

pub fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSpec(_)
        | Error::Domain(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::MemoryCap { .. } => 2,
        Error::ClassViolation(_) => 3,
        Error::SingularAction { .. }
        | Error::EigenSolver(_)
        | Error::NonConvergence { .. }
        | Error::Oscillation { .. }
        | Error::AssemblyRejection { .. }
        | Error::Spectral(_)
        | Error::NoRoot { .. } => 4,
        Error::NoSecondRoot { .. } => 5,
        Error::Degenerate(_)
        | Error::Nondegeneracy(_)
        | Error::Coverage(_)
        | Error::Overflow(_) => 6,
        Error::UnresolvableWindow { .. } => 7,
    }
}

/// Loads the configuration, applies the overrides and runs `cmd` on a
/// worker pool of the requested size. Returns the process exit code.
pub fn run(cmd: Command, config: &std::path::Path, ov: &Overrides) -> i32 {
    match run_inner(cmd, config, ov) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fixtail {}: {e}", cmd.name());
            e.exit_code()
        }
    }
}

fn run_inner(cmd: Command, config: &std::path::Path, ov: &Overrides) -> Result<(), CliError> {
    let mut loaded = config::load(config)?;
    if let Some(seed) = ov.seed {
        loaded.config.seed = seed;
        loaded.sha256 = config::fingerprint(&loaded.config);
    }
    if let Some(t) = ov.threads {
        loaded.config.threads = t;
    }
    if let Some(out) = &ov.out {
        // command-line paths are relative to the working directory
        loaded.config.out = std::path::absolute(out).map_err(fixtail::Error::from)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(loaded.config.threads)
        .build()
        .map_err(|e| {
            CliError::Config(format!(
                "cannot start {} workers: {e}",
                loaded.config.threads
            ))
        })?;
    pool.install(|| commands::dispatch(cmd, &loaded))
}
