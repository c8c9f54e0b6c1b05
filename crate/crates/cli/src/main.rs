//! `sgmlab`: command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 invariant failure,
//! 3 numerical failure.

// `!(x > y)` also catches NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use sgmlab_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "sgmlab", version, about = "Score-based generative sampling laboratory")]
struct Cli {
    /// Seed for every random stream; overrides `seed` fields in configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Semiconvexity triple and convexity constants (t̄, t*, R0, μ̃).
    Constants {
        #[arg(long)]
        potential: PathBuf,
    },
    /// Score against time at x = -0.8 and x = 0.5, as CSV and SVG.
    ScoreProfile {
        #[arg(long)]
        potential: PathBuf,
        #[arg(long, default_value_t = 500)]
        points: usize,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
    },
    /// Run the backward sampler and write the terminal samples.
    Sample {
        #[arg(long)]
        potential: PathBuf,
        #[arg(long)]
        sampler: PathBuf,
        /// Fitted model file; the exact score is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit a tanh-feature score model by least squares.
    Fit {
        #[arg(long)]
        potential: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Feature specification; defaults apply when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Refits used to estimate ε_AL and E|θ̂|⁴ (0 skips the estimate).
        #[arg(long, default_value_t = 0)]
        refits: usize,
        /// Data points of the reference fit for θ*.
        #[arg(long, default_value_t = 200_000)]
        n_ref: usize,
    },
    /// W2 distance between two sample CSV files.
    W2 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "quantile-1d")]
        method: String,
        /// Bootstrap resamples for a standard error (0 disables).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
    },
    /// Error-bound terms and constants for a set of inputs.
    Bounds {
        #[arg(long)]
        inputs: PathBuf,
        /// Also report thresholds and the operating point for accuracy δ.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Grid of sampler runs with measured W2 and bound terms.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Pairwise semiconvexity checks for the given or all built-in families.
    VerifyAssumptions {
        #[arg(long)]
        potential: Vec<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
}

/// A checked property did not hold.
#[derive(Debug)]
pub struct InvariantFailure(pub String);

impl std::fmt::Display for InvariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant failure: {}", self.0)
    }
}

impl std::error::Error for InvariantFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InvariantFailure>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Numerical(_)
                | CoreError::Diverged { .. }
                | CoreError::Bracket { .. }
                | CoreError::Sampler(_) => 3,
                CoreError::Unsupported(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = commands::Context::new(&cli.out, cli.seed)?;
    match cli.command {
        Command::Constants { potential } => commands::constants(&ctx, &potential),
        Command::ScoreProfile {
            potential,
            points,
            t_max,
        } => commands::score_profile(&ctx, &potential, points, t_max),
        Command::Sample {
            potential,
            sampler,
            model,
        } => commands::sample(&ctx, &potential, &sampler, model.as_deref()),
        Command::Fit {
            potential,
            fit,
            features,
            refits,
            n_ref,
        } => commands::fit(&ctx, &potential, &fit, features.as_deref(), refits, n_ref),
        Command::W2 {
            a,
            b,
            method,
            bootstrap,
        } => commands::w2(&ctx, &a, &b, &method, bootstrap),
        Command::Bounds { inputs, delta } => commands::bounds(&ctx, &inputs, delta),
        Command::Sweep { spec } => commands::sweep(&ctx, &spec),
        Command::VerifyAssumptions { potential, pairs } => commands::verify_assumptions(&ctx, &potential, pairs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
