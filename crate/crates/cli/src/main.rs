//! `hesspen`: command-line front end for the Hessian Penalty toolkit.
//!
//! Exit codes: 0 on success, 1 on usage or contract errors, 2 on numeric errors
//! (including a `verify` run whose checks fail).

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hesspen", version, about = "Hessian Penalty estimation, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Artifact directory [default: $HESSPEN_OUT/<subcommand>, or ./hesspen-runs/<subcommand>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<String>,
}

/// Where the function under study comes from.
#[derive(Debug, Args, Clone)]
pub struct Source {
    /// Built-in analytic function: z1z2, separable-cubic, beta-cubic, rotated-separable, quadratic.
    #[arg(long = "fn")]
    pub function: Option<String>,
    /// Generator checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input dimension of the built-in function.
    #[arg(long)]
    pub dim: Option<String>,
    /// Coupling strength of beta-cubic.
    #[arg(long)]
    pub beta: Option<String>,
    /// Output count of rotated-separable.
    #[arg(long)]
    pub outputs: Option<String>,
    /// Seed of the built-in function's random coefficients.
    #[arg(long)]
    pub fn_seed: Option<String>,
}

/// Penalty estimator settings.
#[derive(Debug, Args, Clone)]
pub struct PenaltyArgs {
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<String>,
    /// Rademacher probes per estimate.
    #[arg(long)]
    pub k: Option<String>,
    /// max or mean over output components.
    #[arg(long)]
    pub reduction: Option<String>,
    /// Comma-separated activation taps ("output" for the final output).
    #[arg(long)]
    pub taps: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Penalty of a built-in function or checkpointed generator at given inputs.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        penalty: PenaltyArgs,
        /// Comma-separated input point [default: zeros].
        #[arg(long)]
        z: Option<String>,
        /// Independent estimates at the same point.
        #[arg(long)]
        repeat: Option<String>,
    },
    /// Enumeration suite for the closed form, plus a Monte-Carlo unbiasedness check.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        penalty: PenaltyArgs,
        /// Matrix dimensions, e.g. 2..12.
        #[arg(long)]
        dims: Option<String>,
        /// Random matrices in the enumeration suite.
        #[arg(long)]
        trials: Option<String>,
        /// Largest accepted relative error of the enumeration suite.
        #[arg(long)]
        tol: Option<String>,
        /// Dimension of the Monte-Carlo quadratics.
        #[arg(long)]
        mc_dim: Option<String>,
        /// Number of Monte-Carlo quadratics.
        #[arg(long)]
        mc_matrices: Option<String>,
        /// Estimates per Monte-Carlo quadratic; 0 skips the check.
        #[arg(long)]
        mc_trials: Option<String>,
        /// Accepted deviation in standard errors.
        #[arg(long)]
        mc_sigmas: Option<String>,
    },
    /// Train a generator (gan, reconstruction or baseline).
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        penalty: PenaltyArgs,
        #[arg(long)]
        mode: Option<String>,
        /// Penalty weight after warm-up.
        #[arg(long)]
        lambda: Option<String>,
        /// Steps over which the weight ramps up linearly from 0.
        #[arg(long)]
        warmup: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        #[arg(long)]
        lr_g: Option<String>,
        #[arg(long)]
        lr_d: Option<String>,
        #[arg(long)]
        beta1: Option<String>,
        #[arg(long)]
        beta2: Option<String>,
        /// simple-4factor, complex-2object, 1fov, 2factor or underparam.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        dataset_size: Option<String>,
        #[arg(long)]
        latent_dim: Option<String>,
        /// Comma-separated generator hidden widths.
        #[arg(long)]
        hidden: Option<String>,
        /// Comma-separated discriminator hidden widths.
        #[arg(long)]
        disc_hidden: Option<String>,
        /// Start from this checkpoint's networks.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Discover orthogonal latent directions of a frozen function.
    Directions {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        penalty: PenaltyArgs,
        /// Number of directions [default: input dimension].
        #[arg(long)]
        count: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        /// Step sizes along directions are drawn from U[-eta_max, eta_max].
        #[arg(long)]
        eta_max: Option<String>,
    },
    /// Activeness, path length and Hessian diagonality of a function.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Base latents per activeness score.
        #[arg(long)]
        activeness_base: Option<String>,
        /// Redraws of the swept component per base latent.
        #[arg(long)]
        activeness_sweep: Option<String>,
        /// Components below this fraction of the most active one count as inactive.
        #[arg(long)]
        inactive_fraction: Option<String>,
        #[arg(long)]
        ppl_samples: Option<String>,
        #[arg(long)]
        ppl_alpha: Option<String>,
        /// Latent points at which Hessians are taken.
        #[arg(long)]
        hessian_points: Option<String>,
        #[arg(long)]
        hessian_eps: Option<String>,
    },
    /// Exact finite-difference Hessians as CSV files and heatmaps.
    Hessdump {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Comma-separated input point [default: --points draws from the prior].
        #[arg(long)]
        z: Option<String>,
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        /// Outputs exported per point, largest off-diagonal mass first; 0 exports all.
        #[arg(long)]
        top: Option<String>,
        /// Heatmap pixels per matrix entry.
        #[arg(long)]
        cell: Option<String>,
    },
    /// Export a procedural dataset.
    Data {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        count: Option<String>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::VerificationFailed>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<hessian_penalty::Error>()) {
        Some(hessian_penalty::Error::Numeric { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
