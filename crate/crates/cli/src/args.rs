use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sde-bridge",
    version,
    about = "Bridge-penalized estimation and model selection for discretely observed diffusions"
)]
pub struct Cli {
    /// Worker threads for `mc`, `compare` and `predict` (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an Euler path and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit the QMLE or a penalized estimator to a CSV path.
    Estimate(EstimateArgs),
    /// Calibrate the Bridge penalty from standardized residuals.
    Tune(TuneArgs),
    /// Monte Carlo study driven by a TOML config.
    Mc(ExperimentArgs),
    /// Fit on a training window and bootstrap predictions over the test window.
    Predict(ExperimentArgs),
    /// Joint Bridge versus disjoint estimation on matched replicates.
    Compare(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Built-in model: linear3d, trig2d or linear<d>d.
    #[arg(long, default_value = "linear3d")]
    pub model: String,

    /// Clamp every diffusion entry of the affine models to [-M, M].
    #[arg(long)]
    pub truncate_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of increments.
    #[arg(long)]
    pub n: usize,

    /// Sampling step (default n^{-1/3}).
    #[arg(long)]
    pub delta: Option<f64>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value_t = 0)]
    pub stream: u64,

    /// Initial state, comma separated (default all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,

    /// Drift parameters, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha: Option<Vec<f64>>,

    /// Diffusion parameters, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,

    /// JSON file with `{"alpha": [...], "beta": [...]}`.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    pub theta: Option<PathBuf>,

    /// Euler sub-steps per observation interval.
    #[arg(long, default_value_t = 1)]
    pub refine: usize,

    /// Output CSV (default standard output). A `<file>.json` sidecar is written next to it.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Qmle,
    Bridge,
    Lasso,
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Simplex,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AcfArg {
    LagAveraged,
    Standard,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV with header `t,X1,...` or `date,<names...>`.
    #[arg(long, short)]
    pub input: PathBuf,

    /// Sampling step of the observations.
    #[arg(long)]
    pub delta: f64,

    /// Quasi-likelihood optimizer.
    #[arg(long, value_enum, default_value = "simplex")]
    pub optimizer: OptimizerArg,

    /// Output JSON (default standard output).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PenaltyArgs {
    #[arg(long, default_value_t = 0.9)]
    pub q1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub q2: f64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta2: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_enum, default_value = "qmle")]
    pub method: MethodArg,

    #[command(flatten)]
    pub penalty: PenaltyArgs,

    /// Estimates with magnitude below this are reported as zero.
    #[arg(long, default_value_t = 0.0)]
    pub zero_tol: f64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub input: InputArgs,

    /// Starting configuration `q1,q2,lambda0,gamma0,delta1,delta2`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.9, 2.0, 2.0, 1.0, 1.0])]
    pub psi0: Vec<f64>,

    /// Stop once successive scores differ by less than this (`inf` scores psi0 only).
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,

    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,

    /// Ljung-Box lag count.
    #[arg(long, default_value_t = 10)]
    pub lags: usize,

    #[arg(long, value_enum, default_value = "lag-averaged")]
    pub acf: AcfArg,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML config (keys listed in docs/config.md).
    pub config: PathBuf,

    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}
