//! `kol`: generate datasets, fit and evaluate surrogates, run the benchmark
//! protocols and the control studies, or serve the HTTP API.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kol", version, about = "Kernel operator learning for epidemic control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario config.
    Gen(GenArgs),
    /// Fit a KOL surrogate on a dataset.
    Fit(FitArgs),
    /// Evaluate a model on a test dataset.
    Eval(EvalArgs),
    /// Run the kernel-comparison or the scaling protocol.
    Bench(BenchArgs),
    /// Minimum-eradication-time study over a u_max sweep.
    Erad(EradArgs),
    /// Quadratic-cost optimal control with cross-evaluation.
    Ocquad(OcquadArgs),
    /// Integrate the true ODE for one control.
    Integrate(IntegrateArgs),
    /// Print a named preset config (or list them).
    Preset(PresetArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which splits to write.
    #[arg(long, default_value = "both", value_parser = ["train", "test", "both"])]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Kernel: inline JSON, a JSON file, or a name (linear, matern, rbf,
    /// rational_quadratic, ntk_relu, ntk_erf, ntk_logistic).
    #[arg(long)]
    pub kernel: String,
    /// `m` (trajectory map) or `partial` (derivative map).
    #[arg(long, default_value = "m")]
    pub mode: String,
    #[arg(long, default_value_t = kol_core::DEFAULT_RIDGE)]
    pub ridge: f64,
    /// Positivity transform (map mode only); default on in map mode.
    #[arg(long)]
    pub positivity: Option<bool>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = ["figs", "table1"])]
    pub protocol: String,
    /// Protocol config; defaults to the named preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the number of training batches (figs).
    #[arg(long)]
    pub batches: Option<usize>,
    /// Override the batch size (figs).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the training sizes, comma separated (table1).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EradArgs {
    /// Providers, comma separated: ode, kol-m, kol-d. Defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub provider: Option<Vec<String>>,
    /// u_max values, comma separated; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    pub umax_sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OcquadArgs {
    #[arg(long, value_delimiter = ',')]
    pub provider: Option<Vec<String>>,
    /// Phase counts, comma separated; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    pub phases: Option<Vec<usize>>,
    /// Infection weight; give together with --cu to run a single pair.
    #[arg(long)]
    pub ci: Option<f64>,
    #[arg(long)]
    pub cu: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntegrateArgs {
    /// True-ODE config (model, params, x0, grid, substeps).
    #[arg(long)]
    pub config: PathBuf,
    /// Control as inline JSON or a JSON file (parametric family).
    #[arg(long)]
    pub control: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    /// figs, table1, fig7 or ocquad.
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "KOL_BIND", default_value = "127.0.0.1:8080")]
    pub bind: std::net::SocketAddr,
    /// Directory of static UI assets; the API runs alone when absent.
    #[arg(long, env = "KOL_ASSETS")]
    pub assets: Option<PathBuf>,
    /// Largest accepted training size for POST /models.
    #[arg(long, env = "KOL_MAX_TRAIN", default_value_t = kol_service::DEFAULT_MAX_TRAIN)]
    pub max_train: usize,
    /// Model files to publish at start-up.
    #[arg(long)]
    pub load: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Erad(a) => commands::erad(a),
        Command::Ocquad(a) => commands::ocquad(a),
        Command::Integrate(a) => commands::integrate(a),
        Command::Preset(a) => commands::preset(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
