//! Command-line driver: configuration, subcommands and result files.
//!
//! `run_command` is the whole program; `main` only forwards its exit code.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use capillary::expr::{Expression, ExprError, Var};
pub use commands::{Context, Outcome, RunError};
pub use config::{ConfigError, RunConfig};

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when the solver or a verification step fails.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for unusable configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "capillary", version, about = "Capillary Killing graphs in warped products")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for assembly and certificates (default: hardware count).
    #[arg(long, global = true, env = "CAPILLARY_THREADS")]
    pub threads: Option<usize>,
    /// Overrides `[output] dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Continuation to tau = 1; writes the solution and a certificate report.
    Solve,
    /// Runs every certificate on a stored solution.
    Verify {
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Manufactured-solution refinement study with an error table.
    Mms,
    /// Solves at every refinement level and prints observed orders.
    Convergence,
    /// Cross-validates a one-dimensional run against the dense-grid oracle.
    Oracle1d,
    /// Writes mesh and fields as VTK and mesh text.
    Export {
        #[arg(long)]
        solution: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_command_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// `run_command` with explicit streams. Failures go to `err` as one JSON line
/// `{"error": kind, "message": text}`.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                let _ = writeln!(out, "{line}");
            }
            for file in &outcome.files {
                let _ = writeln!(out, "wrote {}", file.display());
            }
            EXIT_OK
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(err, "{line}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome, RunError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Range("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::Range("--threads must be positive".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| ConfigError::Range(format!("thread pool: {e}")))?;
    let ctx = Context::new(config, cli.output_dir.clone());
    log::info!("command {:?} with seed {}", cli.command, ctx.config.seed);
    pool.install(|| match &cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Verify { solution } => commands::verify(&ctx, solution.as_deref()),
        Command::Mms => commands::mms(&ctx),
        Command::Convergence => commands::convergence(&ctx),
        Command::Oracle1d => commands::oracle1d(&ctx),
        Command::Export { solution } => commands::export(&ctx, solution.as_deref()),
    })
}

#[cfg(test)]
mod tests;
