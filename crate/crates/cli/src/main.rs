mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Blind source separation with FastMNMF on full, single-subarray and
/// distributed microphone arrays.
#[derive(Parser, Debug)]
#[command(name = "dfmnmf", version)]
pub struct Cli {
    /// Worker threads. Estimation is serial; values above 1 are accepted and
    /// ignored.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a scenario to mixture and source-image WAVs plus a manifest.
    Simulate(SimulateArgs),
    /// Separate a multichannel mixture.
    Separate(SeparateArgs),
    /// Score separated images against a simulation manifest.
    Evaluate(EvaluateArgs),
    /// Time the three methods on one simulated mixture.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Run settings; each flag overrides the config file.
#[derive(Args, Debug, Default)]
pub struct RunFlags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// full, single or distributed.
    #[arg(long)]
    pub method: Option<String>,
    /// Channels per subarray, e.g. 4,4,4.
    #[arg(long, value_delimiter = ',')]
    pub partition: Option<Vec<usize>>,
    #[arg(long = "n-sources")]
    pub n_sources: Option<usize>,
    #[arg(long = "k-bases")]
    pub k_bases: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "window-ms")]
    pub window_ms: Option<f64>,
    #[arg(long = "hop-ms")]
    pub hop_ms: Option<f64>,
    /// Estimate one spectrogram model per subarray (distributed only).
    #[arg(long)]
    pub independent: bool,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Multichannel mixture WAV.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// manifest.json written by `simulate`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory written by `separate`.
    #[arg(long)]
    pub separated: PathBuf,
    #[arg(long = "filter-len", default_value_t = dfmnmf::eval::FILTER_LEN)]
    pub filter_len: usize,
    /// Report directory; defaults to the separated directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// JSON grid configuration.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Long-recording dimensions: 16 kHz, 10 s, 4096-sample window.
    #[arg(long)]
    pub long: bool,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Also run the scaling sweeps over M and L.
    #[arg(long)]
    pub scaling: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 1 {
        eprintln!("note: estimation is serial; --threads {} has no effect", cli.threads);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
