mod config;
mod manifest;
mod pipeline;
mod trace;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{CommonArgs, GridArgs, Layers};

/// Validation failure detected by the CLI itself (exit code 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(
    name = "lensforge",
    version,
    about = "Lens PSF simulation, aberration synthesis, neural PSF fields and depth-of-field rendering"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace RGB PSFs and write a PNG plus a JSON sidecar with the float kernels
    TracePsf(trace::TraceArgs),
    /// Build a depth-aware PSF library (.psfl) for one lens
    BuildPsflib {
        /// Bundled lens id or path to a prescription TOML
        #[arg(long)]
        lens: String,
        /// Output .psfl file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Synthesize aberrated images for every pair in a JSON pair list
    Simulate(pipeline::SimulateArgs),
    /// Fit a neural PSF field to one or more libraries
    FitField(pipeline::FitArgs),
    /// Render controllable depth of field for one image
    RenderDof(pipeline::RenderArgs),
    /// Start the HTTP rendering service
    Serve(pipeline::ServeArgs),
}

fn run(cli: Cli) -> Result<()> {
    let layers = Layers::new(&cli.common)?;
    if let Some(n) = layers.workers() {
        if n == 0 {
            return Err(Invalid("workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::TracePsf(args) => trace::run(&layers, args),
        Command::BuildPsflib { lens, out, grid } => {
            pipeline::build_psflib(&layers, &lens, &out, &grid)
        }
        Command::Simulate(args) => pipeline::simulate(&layers, args),
        Command::FitField(args) => pipeline::fit_field(&layers, args),
        Command::RenderDof(args) => pipeline::render_dof(&layers, args),
        Command::Serve(args) => pipeline::serve(&layers, args),
    }
}

/// `(exit code, kind)` for the first recognised cause.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use lensforge::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return (2, "validation");
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::FullyVignetted { .. } | E::EmptyPsf { .. } => (3, "trace"),
                E::Diverged { .. } => (1, "training"),
                E::Io(_) | E::Image(_) => (1, "io"),
                _ => (2, "validation"),
            };
        }
    }
    (1, "error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LENSFORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let line = serde_json::json!({
                "error": kind,
                "code": code,
                "message": format!("{err:#}"),
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
