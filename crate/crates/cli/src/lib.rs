//! Command-line driver: phantom generation, loss evaluation, gradient
//! checking, cohort evaluation and loss-comparison experiments.
//!
//! Exit codes: 0 success, 1 gradient check failed or write error, 2 config
//! error, 3 output collision, 4 input contract violation, 5 numerical abort.

pub mod commands;
pub mod error;
pub mod output;

use clap::{Args, Parser, Subcommand};
pub use error::CliError;
use l1dfl_core::losses::{FocalReduction, LossConfig, LossId};
use output::Clock;

#[derive(Debug, Parser)]
#[command(name = "l1dfl", version, about = "L1-weighted Dice Focal loss toolkit")]
pub struct Cli {
    /// Worker threads for per-case and per-loss work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Leave timestamps out of manifests so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timestamps: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom cohort as .vvol triplets.
    #[command(long_about = commands::phantom::LONG_ABOUT)]
    Phantom(commands::phantom::PhantomArgs),
    /// Evaluate a loss and its gradient on a prediction/target pair.
    #[command(long_about = commands::loss::LONG_ABOUT)]
    Loss(commands::loss::LossArgs),
    /// Compare analytic gradients with central finite differences.
    #[command(long_about = commands::gradcheck::LONG_ABOUT)]
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Lesion-level evaluation of prediction masks against ground truth.
    #[command(long_about = commands::evaluate::LONG_ABOUT)]
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Train the feature model with each loss on a phantom cohort and compare.
    #[command(long_about = commands::experiment::LONG_ABOUT)]
    Experiment(commands::experiment::ExperimentArgs),
}

/// Loss hyper-parameter flags shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct LossFlags {
    /// Focal focusing exponent.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Residual bin width of the L1 weighting.
    #[arg(long = "gamma-bin", default_value_t = 0.1)]
    pub gamma_bin: f64,
    /// Dice smoothing term.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Focal scale.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Sum the focal term over voxels instead of averaging.
    #[arg(long)]
    pub focal_sum: bool,
}

impl LossFlags {
    pub fn config(&self) -> Result<LossConfig, CliError> {
        let cfg = LossConfig {
            epsilon: self.epsilon,
            gamma: self.gamma,
            alpha: self.alpha,
            bin_width: self.gamma_bin,
            focal_reduction: if self.focal_sum { FocalReduction::Sum } else { FocalReduction::Mean },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_loss(s: &str) -> Result<LossId, String> {
    s.parse::<LossId>().map_err(|e| e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let clock = Clock { enabled: !cli.no_timestamps };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cli.jobs)))?;
    pool.install(|| match cli.command {
        Command::Phantom(a) => commands::phantom::run(&a, clock),
        Command::Loss(a) => commands::loss::run(&a),
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a, clock),
        Command::Experiment(a) => commands::experiment::run(&a, clock),
    })
}

