//! `latentfit`: generate ring-down signals, train the parameter-space
//! autoencoder, estimate parameters and run the evaluation protocols.
//!
//! Exit status: 0 on success, 1 when the library rejects a request, 2 on usage
//! or input-format errors.

mod commands;
mod config;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use units::parse_quantity;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(latentfit::Error),
}

impl From<latentfit::Error> for CliError {
    fn from(e: latentfit::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(e.into())
    }
}

#[derive(Parser)]
#[command(name = "latentfit", version, about = "Ring-down parameter estimation with a physics-aware autoencoder")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed (falls back to $LATENTFIT_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for Monte-Carlo commands (default: all logical cores; 1 for bench).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a dataset of noisy signals with random parameters.
    Generate(GenerateArgs),
    /// Train an autoencoder with the three-stage schedule.
    Train(TrainArgs),
    /// Estimate parameters of every signal in a dataset with a trained model.
    Encode(ModelDataArgs),
    /// Run signals through the full autoencoder.
    Reconstruct(ReconstructArgs),
    /// Least-squares fit of every signal in a dataset.
    Fit(FitArgs),
    /// Cramér-Rao bounds on frequency and decay constant.
    Crlb(CrlbArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Model file utilities.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Args, Default)]
pub struct GridArgs {
    /// Samples per signal.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Sampling rate (Hz, or with suffix, e.g. 200MHz).
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub sample_rate: Option<f64>,
}

#[derive(Args, Default)]
pub struct DistArgs {
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub tau_mean: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub tau_std: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub freq_mean: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub freq_std: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub phase_mean: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub phase_std: Option<f64>,
}

/// True parameters of the signals drawn by an evaluation.
#[derive(Args, Default)]
pub struct TruthArgs {
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub freq: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub phase: Option<f64>,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Signal model: exp or osc.
    #[arg(long)]
    pub kind: Option<String>,
    /// Number of signals.
    #[arg(long)]
    pub n: Option<usize>,
    /// Amplitude over noise variance; `inf` for noiseless.
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    /// Redraw parameters whose latent value exceeds this magnitude.
    #[arg(long)]
    pub latent_bound: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub dist: DistArgs,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kind: Option<String>,
    /// Output model file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Write the loss history as JSON.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Epochs of stages 1, 2 and 3, e.g. 100,100,100.
    #[arg(long)]
    pub stage_epochs: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub signals_per_dataset: Option<usize>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub latent_bound: Option<f64>,
    #[arg(long)]
    pub input_init_gain: Option<f64>,
    /// all, or reconstruction (stage 1 only).
    #[arg(long)]
    pub stages: Option<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub dist: DistArgs,
}

#[derive(Args)]
pub struct ModelDataArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Write output here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Dataset file receiving the reconstructed signals.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Model to fit; defaults to the dataset's kind.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CrlbArgs {
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    /// Sampling bandwidth (default: the grid's sample rate).
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub fbw: Option<f64>,
    /// Measurement window (default: the grid's duration).
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub tm: Option<f64>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Distribution of one parameter estimate over noisy copies of one signal.
    Hist(HistArgs),
    /// Estimator spread against SNR, with Cramér-Rao bounds.
    Sweep(SweepArgs),
    /// Tracking of a simulated spectral feature.
    Scan(ScanArgs),
    /// Encoder latency and throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct HistArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    /// Number of noisy signals.
    #[arg(long)]
    pub n: Option<usize>,
    /// Parameter to summarise (default tau).
    #[arg(long)]
    pub param: Option<String>,
    /// autoencoder or least-squares.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Comma-separated SNR list (default 2^1,2^3,...,2^19).
    #[arg(long, value_parser = parse_quantity, value_delimiter = ',', allow_hyphen_values = true)]
    pub snrs: Option<Vec<f64>>,
    #[arg(long)]
    pub n_per_point: Option<usize>,
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScanArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// lorentzian or cotton (default: lorentzian for exp, cotton for osc).
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long, value_parser = parse_quantity, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub n_per_point: Option<usize>,
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Benchmark this model's encoder; without it, random encoders of the standard sizes.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Also measure multi-threaded throughput.
    #[arg(long)]
    pub parallel: bool,
    /// Include the no-op harness baseline.
    #[arg(long)]
    pub noop: bool,
    /// Encoder arithmetic: f64 or f32.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum ModelCommand {
    /// Print a model's architecture, latent mapping and FLOP count.
    Inspect {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
