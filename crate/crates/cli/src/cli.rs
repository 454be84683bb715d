use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "jointrait", version, about = "Fit, predict with and serve latent-trait joint models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit a model by MCMC and write a posterior archive.
    Fit(FitArgs),
    /// Predict risk and outcome trajectories for one subject.
    Predict(PredictArgs),
    /// Score held-out risk predictions with time-dependent AUC and Brier score.
    Evaluate(EvaluateArgs),
    /// Serve the archives in a store over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of subjects.
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scenario JSON replacing the built-in design and true parameters.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory holding the dataset CSVs.
    #[arg(long)]
    pub data: PathBuf,
    /// Model specification JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Prior hyperparameters JSON; defaults when absent.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 2000)]
    pub iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Hold the association coefficients fixed, e.g. `--fixed-association 0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub fixed_association: Option<Vec<f64>>,
    /// Drop the per-subject random-effect draws from the archive.
    #[arg(long)]
    pub no_subject_effects: bool,
    /// Also write the posterior summary table as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Posterior archive (`.jma`).
    #[arg(long)]
    pub model: PathBuf,
    /// Subject JSON: covariates and visits, in the service's request format.
    #[arg(long)]
    pub subject: PathBuf,
    #[arg(long)]
    pub landmark: Option<f64>,
    /// Comma-separated risk horizons.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this many evenly spaced archive draws instead of all of them.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BrierWeighting {
    Censoring,
    Event,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV with columns id, risk, time, event.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub landmark: f64,
    #[arg(long)]
    pub horizon: f64,
    /// Half-width of the kernel on the risk scale.
    #[arg(long, default_value_t = 0.10)]
    pub bandwidth: f64,
    /// Cutpoints reported on the ROC curve.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    /// Survival function weighting the Brier terms.
    #[arg(long, value_enum, default_value_t = BrierWeighting::Censoring)]
    pub brier_weights: BrierWeighting,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of `.jma` archives; each file stem is a model id.
    #[arg(long, env = "JOINTRAIT_STORE")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of static client assets served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}
