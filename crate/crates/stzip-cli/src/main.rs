//! `stzip`: simulate, fit, predict, and validate zero-inflated count
//! surveys from the command line.
//!
//! Exit codes: 0 on success, 2 for input or configuration problems, 3 for
//! numerical failures inside the sampler. Failures print one structured
//! JSON object to stderr.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "stzip", version, about = "Spatio-temporal zero-inflated count modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey with known truth into a directory.
    Simulate {
        /// Output directory; receives data.csv, truth.json, scenario.json,
        /// and manifest.json.
        out_dir: PathBuf,
        /// Scenario JSON; omit to use a named preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset when no config is given: default or alternate.
        #[arg(long, default_value = "default")]
        truth: String,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model and write draws, summary, and manifest.
    Fit {
        /// Observation CSV: t,loc_x,loc_y,y,x1,...
        data: PathBuf,
        /// Output directory for the fit artifacts.
        out_dir: PathBuf,
        /// Prior and MCMC configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model variant: stzip, stp, or zip.
        #[arg(long, default_value = "stzip")]
        model: String,
        /// Override the chain seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Total sweeps including burn-in.
        #[arg(long)]
        iters: Option<usize>,
        /// Sweeps discarded before storage.
        #[arg(long)]
        burnin: Option<usize>,
        /// Keep every k-th sweep after burn-in.
        #[arg(long)]
        thin: Option<usize>,
        /// Knot count, or a path to a knot CSV.
        #[arg(long)]
        knots: Option<String>,
        /// Surrogate shape parameter.
        #[arg(long)]
        delta: Option<f64>,
        /// Comma-separated candidate bandwidths.
        #[arg(long)]
        bandwidth_grid: Option<String>,
        /// Independent chains run in parallel; draws are suffixed per chain
        /// and the summary pools them.
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Evaluate posterior surfaces on a lattice or a points file.
    Predict {
        /// Fit directory produced by `fit`.
        fit_dir: PathBuf,
        /// Either x0:x1:y0:y1:res, or a path to a CSV of points in the
        /// observation format (the count column is ignored).
        grid: String,
        /// Output surface CSV.
        out: PathBuf,
        /// Period for lattice grids; defaults to the last fitted period.
        #[arg(long)]
        period: Option<usize>,
        /// Comma-separated covariate row for lattice grids; defaults to an
        /// intercept followed by zeros.
        #[arg(long)]
        covariates: Option<String>,
        /// Sample random-walk increments for periods beyond the fit instead
        /// of carrying the last level forward.
        #[arg(long, default_value_t = false)]
        sample_future_walk: bool,
        /// Use every k-th stored draw.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Seed for sampled future increments.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Score a fit against held-out observations.
    Validate {
        /// Fit directory produced by `fit`.
        fit_dir: PathBuf,
        /// Held-out observation CSV.
        test_data: PathBuf,
        /// Output score JSON.
        out: PathBuf,
        /// Use every k-th stored draw.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Point predictions from the parameter posterior means instead of
        /// the posterior mean of the expected count.
        #[arg(long, default_value_t = false)]
        plug_in: bool,
        /// Seed for the replicate simulation inside the predictive loss.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn dispatch(command: Command) -> stzip::Result<()> {
    match command {
        Command::Simulate {
            out_dir,
            config,
            truth,
            seed,
        } => run::cmd_simulate(&run::SimulateArgs {
            out_dir,
            config,
            truth,
            seed,
        }),
        Command::Fit {
            data,
            out_dir,
            config,
            model,
            seed,
            iters,
            burnin,
            thin,
            knots,
            delta,
            bandwidth_grid,
            chains,
        } => run::cmd_fit(&run::FitArgs {
            data,
            out_dir,
            config,
            model,
            seed,
            iters,
            burnin,
            thin,
            knots,
            delta,
            bandwidth_grid,
            chains,
        }),
        Command::Predict {
            fit_dir,
            grid,
            out,
            period,
            covariates,
            sample_future_walk,
            stride,
            seed,
        } => run::cmd_predict(&run::PredictArgs {
            fit_dir,
            grid,
            out,
            period,
            covariates,
            sample_future_walk,
            stride,
            seed,
        }),
        Command::Validate {
            fit_dir,
            test_data,
            out,
            stride,
            plug_in,
            seed,
        } => run::cmd_validate(&run::ValidateArgs {
            fit_dir,
            test_data,
            out,
            stride,
            plug_in,
            seed,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let wrapped = stzip::StzipError::config(err.to_string());
            eprintln!("{}", run::error_json(&wrapped));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", run::error_json(&err));
            ExitCode::from(run::exit_code(&err))
        }
    }
}
