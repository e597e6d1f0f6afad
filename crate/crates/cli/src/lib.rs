//! Batch front end for `mixinv`: synthetic data generation, Bayesian
//! inversion, deterministic baselines and chain diagnostics.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

pub mod chain;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mixinv", version, about = "Bayesian inversion of mixed linear/nonlinear models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic model, observation and ground-truth files.
    Generate(CommonArgs),
    /// Sample the posterior; write the chain, series and summary report.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
        /// Proposals per iteration; 1 runs the single-chain sampler.
        #[arg(long)]
        n_par: Option<usize>,
    },
    /// Run a deterministic baseline.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        /// gcv-pointwise, gcv-global, cls-pointwise or cls-global.
        #[arg(long)]
        method: Option<String>,
    },
    /// Recompute the summary report from a chain file.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
        /// Stage whose samples are summarized.
        #[arg(long, default_value_t = 3)]
        stage: u8,
        /// Stored report to check against; defaults to report.txt beside the chain.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding model.json and observation.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides io.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self, n_par: Option<usize>, method: Option<String>) -> CliResult<RunConfig> {
        RunConfig::load(&self.config)?.resolve(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            data: self.data.clone(),
            n_par,
            method,
        })
    }
}

/// Runs one subcommand and returns the text to print.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.load(None, None)?;
            let out = commands::cmd_generate(&cfg)?;
            let mut text = String::new();
            for f in &out.files {
                text += &format!("wrote {}\n", f.display());
            }
            text += &format!(
                "measurements={}\nnoise_ratio_target={}\nnoise_ratio_realized={:.6}\nsigma_true={:e}\n",
                out.n_measurements, out.target_noise_ratio, out.realized_noise_ratio, out.truth.sigma_true
            );
            Ok(text)
        }
        Command::Invert { common, n_par } => {
            let cfg = common.load(n_par, None)?;
            let out = commands::cmd_invert(&cfg)?;
            Ok(format!(
                "wrote {}\nwrote {}\nwrote {}\n{}\n{}",
                out.chain_path.display(),
                out.series_path.display(),
                out.report_path.display(),
                out.report.headline(),
                out.report.to_text()
            ))
        }
        Command::Baseline { common, method } => {
            let cfg = common.load(None, method)?;
            let out = commands::cmd_baseline(&cfg)?;
            Ok(format!(
                "method={}\nnorm_u={:e}\n{}wrote {}\n",
                out.method.name(),
                out.norm_u,
                out.text,
                out.path.display()
            ))
        }
        Command::Diagnose { chain, stage, report } => {
            let out = commands::cmd_diagnose(&chain, stage, report.as_deref())?;
            let mut text = format!("{}\n{}", out.report.headline(), out.report.to_text());
            if let Some(p) = out.compared_with {
                text += &format!("matches {} to rel 1e-12\n", p.display());
            }
            Ok(text)
        }
    }
}
