//! `amos`: train AMOS units, convert ANN graphs into spiking networks,
//! simulate them and check them against the original network.
//!
//! Exit codes: 0 success, 2 usage, 3 bad data or schema, 4 divergence.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use amos_core::{GateKind, Mode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "amos", version, about = "AMOS spiking conversion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a unit (or build the closed-form ReLU unit) and write its parameters.
    TrainUnit(TrainUnitArgs),
    /// Sweep a unit over its domain and write (input, target, output) rows.
    Curve(CurveArgs),
    /// Write the closed-form ReLU unit.
    BuildRelu(BuildReluArgs),
    /// Compile a graph into a spiking network.
    Convert(ConvertArgs),
    /// Compare a graph and its spiking network on a dataset.
    Verify(VerifyArgs),
    /// Stream inputs through a network and report latency, throughput and spikes.
    Bench(BenchArgs),
    /// Run a network on given inputs and write its outputs and spike raster.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Relu,
    Sigmoid,
    Swish,
    Mult,
}

impl From<KindArg> for GateKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Relu => GateKind::Relu,
            KindArg::Sigmoid => GateKind::Sigmoid,
            KindArg::Swish => GateKind::Swish,
            KindArg::Mult => GateKind::Mult,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Pipelined,
    Single,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pipelined => Mode::Pipelined,
            ModeArg::Single => Mode::Single,
        }
    }
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed (default 0, or the training config's seed).
    #[arg(long, env = "AMOS_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainUnitArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Number of neurons; defaults to the kind's usual size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Input interval `lo:hi`; give it twice for `mult`.
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Vec<String>,
    /// JSON training configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Skip training and emit the closed-form unit (relu only).
    #[arg(long)]
    pub closed_form: bool,
    /// Clamp range of the closed-form unit.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Parameter file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-epoch MSE history as CSV.
    #[arg(long)]
    pub mse_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Samples (per axis for two-input units).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Kind to compare against when the parameter file has none.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// CSV destination; stdout if omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildReluArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Unit parameter files; each must record its kind.
    #[arg(long = "unit", required = true)]
    pub units: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Conversion report; stdout if omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// CSV with a header row; an extra trailing column (a label) is ignored.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Use only the first N rows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Unit files whose grid MSE goes into the report.
    #[arg(long = "unit")]
    pub units: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "pipelined")]
    pub mode: ModeArg,
    /// Inputs are drawn uniformly from [-scale, scale].
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Input rows as CSV with a header.
    #[arg(long, conflicts_with = "input")]
    pub dataset: Option<PathBuf>,
    /// One comma-separated input vector; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub input: Vec<String>,
    #[arg(long, value_enum, default_value = "pipelined")]
    pub mode: ModeArg,
    /// Full simulation report as JSON; stdout if omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Outputs as CSV, one row per input.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Spike raster as CSV.
    #[arg(long)]
    pub raster: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainUnit(a) => commands::train_unit(a),
        Command::Curve(a) => commands::curve(a),
        Command::BuildRelu(a) => commands::build_relu(a),
        Command::Convert(a) => commands::convert(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
