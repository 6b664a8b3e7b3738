//! The `flipforge` command line: sequences, ψ, map evaluation, grids,
//! verification suites and refinement steps.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check fails or
//! a computation errors, 2 for usage errors.

mod commands;
mod output;
mod verify;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flipforge::modulus::{build_psi, Modulus};
use serde::Serialize;
use std::ffi::OsString;
use std::path::PathBuf;
use thiserror::Error;

pub use verify::{CheckResult, Report, Suite};

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "FLIPFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "flipforge", version, about = "Orientation-reversing bi-sub-Lipschitz flips of the unit cube")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scale sequence α, β, λ with its lemma certificate.
    Sequences {
        #[command(flatten)]
        modulus: ModulusArgs,
        /// Last index of the sequence.
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// The slower modulus ψ built from φ.
    Psi {
        #[arg(long, default_value = "power:0.5")]
        phi: String,
        /// Number of series terms.
        #[arg(long, default_value_t = 48)]
        k: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate Φ_K or its inverse at points.
    Eval {
        #[command(flatten)]
        map: MapArgs,
        /// Comma-separated coordinates; repeat for several points.
        #[arg(long, required = true)]
        point: Vec<String>,
        #[arg(long)]
        inverse: bool,
        /// Evaluate the limit to this distance instead of at `--depth`.
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sample Φ_K on a lattice and write coordinates or a displacement image.
    Grid {
        #[command(flatten)]
        map: MapArgs,
        /// Lattice points per axis.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Value of the coordinates beyond the first two in images.
        #[arg(long, default_value_t = 0.5)]
        slice: f64,
        #[arg(long)]
        inverse: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a verification suite and report every check.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        map: MapArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample count of the Monte-Carlo checks.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run refinement steps and save the state.
    Refine {
        #[command(flatten)]
        map: MapArgs,
        /// Continue from a saved state instead of the base flip.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pairs of the modulus scans.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        /// Force the cell radius; the radius condition is then not enforced.
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Args, Clone)]
struct ModulusArgs {
    /// `power:<beta>`, `tlog2` or `file:<path>`.
    #[arg(long, default_value = "power:0.5")]
    phi: String,
    /// Build ψ from φ and use it instead.
    #[arg(long)]
    psi: bool,
}

#[derive(Debug, Args, Clone)]
struct MapArgs {
    #[command(flatten)]
    modulus: ModulusArgs,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
}

#[derive(Debug, Args, Clone)]
struct OutArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the extension of `--out`, else to the command's text format.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Pgm,
    Ppm,
}

impl OutArgs {
    fn format(&self, default: Format) -> Format {
        self.format
            .or_else(|| {
                let ext = self.out.as_ref()?.extension()?.to_str()?.to_ascii_lowercase();
                Format::from_str(&ext, true).ok()
            })
            .unwrap_or(default)
    }
}

/// Settings echoed into every machine-readable output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub modulus: String,
    pub psi: bool,
    pub n: Option<usize>,
    pub depth: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub tol: Option<f64>,
    pub threads: Option<usize>,
    pub version: &'static str,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Failed(_) | Self::Io(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

impl ModulusArgs {
    fn resolve(&self) -> Result<Modulus, CliError> {
        let phi = Modulus::parse(&self.phi).map_err(|e| CliError::Usage(format!("--phi {}: {e}", self.phi)))?;
        if self.psi {
            Ok(build_psi(&phi, flipforge::refine::PSI_TERMS).map_err(failed)?.modulus)
        } else {
            Ok(phi)
        }
    }
}

impl MapArgs {
    fn check(&self) -> Result<(), CliError> {
        if !(2..=4).contains(&self.n) {
            return Err(CliError::Usage(format!("--n must be 2, 3 or 4, got {}", self.n)));
        }
        if self.depth > 60 {
            return Err(CliError::Usage(format!("--depth must be at most 60, got {}", self.depth)));
        }
        Ok(())
    }
}

/// Reads `FLIPFORGE_THREADS`; unset means rayon's default.
fn threads() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("flipforge: {e}");
            e.code()
        }
    }
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    let threads = threads()?;
    if let Some(t) = threads {
        // Fails only when a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    commands::dispatch(cli.command, threads)
}
