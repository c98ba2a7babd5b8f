//! `csgd`: simulate data, fit composite likelihoods, run inference and
//! simulation studies. Every command writes its results CSV plus a JSON run
//! manifest next to it.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "csgd", version, about = "Composite-likelihood stochastic gradient estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw exact samples from an Ising model.
    SimulateIsing(SimulateIsingArgs),
    /// Draw samples from the gamma-frailty count model.
    SimulateFrailty(SimulateFrailtyArgs),
    /// Estimate parameters by stochastic or full gradient ascent.
    Fit(FitArgs),
    /// Fit with the stochastic optimiser, then report standard errors,
    /// Wald tests and confidence intervals.
    Infer(InferArgs),
    /// Simulation studies.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Ising,
    Frailty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IsingTruth {
    /// Two-row grid with alternating intercepts; needs an even p.
    Grid,
    /// Sparse graph made of blocks of eight nodes.
    Symptom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Gd,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateIsingArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = IsingTruth::Grid)]
    pub truth: IsingTruth,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Data CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateFrailtyArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub n: usize,
    /// Frailty variance; defaults to 0.25.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Exchangeable correlation in [0, 1); defaults to 0.5.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Comma-separated log means, one per variable; defaults to
    /// alternating -0.25, 0.25.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Headerless integer CSV; rows are observations.
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration in TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// Full-gradient tolerance on max |gradient| / n.
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    /// Estimates CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Covariance regime: 1, 2 or 3.
    #[arg(long, default_value = "3")]
    pub regime: String,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Restrict the Holm family to Ising edge parameters.
    #[arg(long)]
    pub edges_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// MSE and variance-trace trajectories over replications.
    Mse(MseArgs),
    /// Empirical coverage of confidence intervals per regime.
    Coverage(CoverageArgs),
    /// Step-size selection by repeated halving.
    Tune(TuneArgs),
    /// End-to-end network estimation with edge tests on synthetic survey data.
    Nesarc(NesarcArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct StudyArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub eta0: Vec<f64>,
    /// Schemes, e.g. `standard,bernoulli,hyper,recycle_hyper:100`.
    #[arg(long, value_delimiter = ',', default_value = "standard,bernoulli,hyper")]
    pub schemes: Vec<String>,
    /// Stopping times as multiples of n.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3")]
    pub checkpoints: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MseArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Also fit the full-gradient estimate in each replication.
    #[arg(long)]
    pub gd_baseline: bool,
    /// Optional per-replication record CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub regimes: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Data CSV; when absent, data are simulated from the model's default
    /// truth with `--n` and `--p`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value = "hyper")]
    pub scheme: String,
    #[arg(long, default_value_t = 8.0)]
    pub initial: f64,
    #[arg(long, default_value_t = 8)]
    pub max_halvings: usize,
    #[arg(long, default_value_t = 0.001)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub passes: f64,
    #[arg(long, default_value_t = 0.1)]
    pub holdout_frac: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NesarcArgs {
    #[arg(long, default_value_t = 32)]
    pub p: usize,
    #[arg(long, default_value_t = 31_826)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub holdout_frac: f64,
    #[arg(long, default_value_t = 1000)]
    pub recycle: usize,
    #[arg(long, default_value_t = 0.01)]
    pub level: f64,
    #[arg(long, default_value_t = 20.0)]
    pub max_passes: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SimulateIsing(a) => commands::simulate_ising(&a),
        Command::SimulateFrailty(a) => commands::simulate_frailty(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Experiment(e) => match e {
            ExperimentCommand::Mse(a) => commands::experiment_mse(&a),
            ExperimentCommand::Coverage(a) => commands::experiment_coverage(&a),
            ExperimentCommand::Tune(a) => commands::experiment_tune(&a),
            ExperimentCommand::Nesarc(a) => commands::experiment_nesarc(&a),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
