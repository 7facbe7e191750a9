use std::fs::File;
use std::path::{Path, PathBuf};

use dfmnmf::bench::{bench_methods, bench_scaling_distributed, bench_scaling_full, write_bench_csv, BenchReport, Environment, ScalingDims};
use dfmnmf::config::{MethodName, RunConfig};
use dfmnmf::container;
use dfmnmf::eval::{sdr_improvement, write_sdr_csv, SdrReport, SdrRow};
use dfmnmf::hermlin::BlockLayout;
use dfmnmf::init::{InitOptions, Method};
use dfmnmf::mixsim::{simulate, write_ground_truth, DiffuseTail, Manifest, Scenario};
use dfmnmf::pipeline::separate_waveforms;
use dfmnmf::stft::{stft_forward, StftConfig};
use dfmnmf::wav::{read_wav, write_wav, WavFormat};
use serde::{Deserialize, Serialize};

use crate::{BenchmarkArgs, Command, EvaluateArgs, RunFlags, SeparateArgs, SimulateArgs};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Shape(String),
    MissingTruth(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Shape(_) => 4,
            CliError::MissingTruth(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::Shape(m) => write!(f, "shape mismatch: {m}"),
            CliError::MissingTruth(m) => write!(f, "missing ground truth: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<dfmnmf::Error> for CliError {
    fn from(e: dfmnmf::Error) -> Self {
        use dfmnmf::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidConfig(_)
            | E::Json(_)
            | E::FactorialBlowup { .. }
            | E::InsufficientGrid { .. }
            | E::CoincidentPositions { .. }
            | E::SilentSource(_)
            | E::IndexOutOfRange(_) => CliError::Config(msg),
            E::Io(_) | E::Wav(_) | E::Csv(_) | E::Container(_) => CliError::Io(msg),
            E::ShapeMismatch(_) => CliError::Shape(msg),
            _ => CliError::Failed(msg),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| io(path, e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Separate(a) => cmd_separate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = Scenario::from_json(&read_text(&a.scenario)?).map_err(|e| CliError::Config(e.to_string()))?;
    let truth = simulate(&scenario, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let manifest = write_ground_truth(&a.out, &scenario, &truth, a.seed)?;
    println!(
        "wrote {} channels, {} source images, {} samples to {}",
        truth.mixture.len(),
        manifest.images.len(),
        truth.mixture[0].len(),
        a.out.display()
    );
    Ok(())
}

/// Config file (if any) with command-line overrides applied.
pub fn resolve_config(flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => serde_json::from_str::<RunConfig>(&read_text(p)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(m) = &flags.method {
        cfg.method = m.parse::<MethodName>()?;
    }
    if flags.partition.is_some() {
        cfg.partition.clone_from(&flags.partition);
    }
    if let Some(v) = flags.n_sources {
        cfg.n_sources = v;
    }
    if let Some(v) = flags.k_bases {
        cfg.k_bases = v;
    }
    if let Some(v) = flags.iters {
        cfg.iterations = v;
    }
    if let Some(v) = flags.floor {
        cfg.floor = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.window_ms {
        cfg.window_ms = v;
    }
    if let Some(v) = flags.hop_ms {
        cfg.hop_ms = v;
    }
    if flags.independent {
        cfg.share_spectrograms = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Written next to the separated WAVs.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeparationInfo {
    pub method: String,
    /// Global indices of the channels in every `source_{n}.wav`.
    pub channels: Vec<usize>,
    pub sample_rate: u32,
    pub n_sources: usize,
    pub sources: Vec<PathBuf>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub estimation_seconds: f64,
    pub stages: dfmnmf::fastmnmf::StageTimes,
    pub config: RunConfig,
}

pub const SEPARATION_INFO: &str = "separation.json";

fn cmd_separate(a: &SeparateArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.run)?;
    if a.mixture.is_some() {
        cfg.mixture.clone_from(&a.mixture);
    }
    if a.out.is_some() {
        cfg.out_dir.clone_from(&a.out);
    }
    let mixture_path = cfg.mixture.clone().ok_or_else(|| CliError::Config("mixture: no input WAV given".into()))?;
    let out = cfg.out_dir.clone().ok_or_else(|| CliError::Config("out_dir: no output directory given".into()))?;
    let audio = read_wav(&mixture_path).map_err(|e| io(&mixture_path, e))?;
    let layout = cfg.layout(audio.n_channels())?;
    let method = cfg.method();
    let stft = cfg.stft(audio.sample_rate)?;
    let (run, waves) = separate_waveforms(&audio.channels, &stft, &layout, method, &cfg.init_options(), &cfg.fit_options())?;

    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let mut sources = Vec::new();
    for (n, w) in waves.iter().enumerate() {
        let name = PathBuf::from(format!("source_{n}.wav"));
        write_wav(out.join(&name), audio.sample_rate, w, WavFormat::Float32)?;
        sources.push(name);
    }
    let meta = serde_json::to_string(&cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    container::save(out.join("model.bin"), &run.fit.model, &meta)?;
    std::fs::write(out.join("model.json"), container::to_json(&run.fit.model)?).map_err(|e| io(&out, e))?;
    run.fit.report.write_trace_csv(create(&out.join("trace.csv"))?)?;
    let report = &run.fit.report;
    let info = SeparationInfo {
        method: method.name().to_string(),
        channels: method.channels(&layout).collect(),
        sample_rate: audio.sample_rate,
        n_sources: waves.len(),
        sources,
        iterations: report.iterations,
        initial_cost: report.cost_trace[0],
        final_cost: report.final_cost(),
        estimation_seconds: report.total_seconds(),
        stages: report.stages,
        config: cfg,
    };
    write_json(&out.join(SEPARATION_INFO), &info)?;
    println!(
        "{}: {} sources x {} channels, {} iterations, cost {:.6e} -> {:.6e}",
        info.method,
        info.n_sources,
        info.channels.len(),
        info.iterations,
        info.initial_cost,
        info.final_cost
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    method: String,
    reference_mic: usize,
    filter_len: usize,
    mean_improvement_db: f64,
    mean_sdr_db: f64,
    report: SdrReport,
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    if !a.manifest.is_file() {
        return Err(CliError::MissingTruth(format!("{} not found", a.manifest.display())));
    }
    let manifest: Manifest =
        serde_json::from_str(&read_text(&a.manifest)?).map_err(|e| CliError::Config(e.to_string()))?;
    let root = a.manifest.parent().unwrap_or(Path::new("."));
    let r = manifest.reference_mic;
    let read_truth = |p: &Path| -> Result<Vec<f64>> {
        let path = root.join(p);
        if !path.is_file() {
            return Err(CliError::MissingTruth(format!("{} not found", path.display())));
        }
        let audio = read_wav(&path).map_err(|e| io(&path, e))?;
        audio.channels.get(r).cloned().ok_or_else(|| CliError::Shape(format!("{} has no channel {r}", path.display())))
    };
    let mixture = read_truth(&manifest.mixture)?;
    let truth = manifest.images.iter().map(|p| read_truth(p)).collect::<Result<Vec<_>>>()?;

    let info_path = a.separated.join(SEPARATION_INFO);
    let info: SeparationInfo =
        serde_json::from_str(&read_text(&info_path)?).map_err(|e| CliError::Config(e.to_string()))?;
    let local = info
        .channels
        .iter()
        .position(|&c| c == r)
        .ok_or_else(|| CliError::Config(format!("reference mic {r} is not among the separated channels")))?;
    let mut estimates = Vec::new();
    for name in &info.sources {
        let path = a.separated.join(name);
        let audio = read_wav(&path).map_err(|e| io(&path, e))?;
        let mut ch = audio.channels.get(local).cloned().ok_or_else(|| CliError::Shape(format!("{} lacks channel {local}", path.display())))?;
        ch.resize(mixture.len(), 0.0);
        estimates.push(ch);
    }
    if estimates.len() != truth.len() {
        return Err(CliError::Shape(format!("{} estimates for {} sources", estimates.len(), truth.len())));
    }
    let report = sdr_improvement(&mixture, &truth, &estimates, a.filter_len)?;
    let out = a.out.clone().unwrap_or_else(|| a.separated.clone());
    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let rows = SdrRow::from_report(&info.method, manifest.seed, &report);
    write_sdr_csv(&rows, create(&out.join("sdr.csv"))?)?;
    let summary = EvaluationSummary {
        method: info.method.clone(),
        reference_mic: r,
        filter_len: a.filter_len,
        mean_improvement_db: report.mean_improvement(),
        mean_sdr_db: report.mean_sdr(),
        report,
    };
    write_json(&out.join("sdr.json"), &summary)?;
    println!(
        "{}: mean SDR {:.2} dB, mean improvement {:.2} dB",
        summary.method, summary.mean_sdr_db, summary.mean_improvement_db
    );
    Ok(())
}

/// Benchmark grid file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub seed: u64,
    pub n_sources: usize,
    pub k_bases: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub methods: Vec<Method>,
    /// Statistical reverberation tail of the simulated mixture.
    pub diffuse_tail: Option<DiffuseTail>,
    pub scaling: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_sources: 3,
            k_bases: 16,
            iterations: 200,
            repeats: 3,
            sample_rate: 8000,
            duration_s: 2.4,
            window_ms: 64.0,
            hop_ms: 16.0,
            methods: vec![Method::Single, Method::Distributed, Method::Full],
            diffuse_tail: Some(DiffuseTail { rt60_s: 0.3, drr_db: 10.0 }),
            scaling: false,
        }
    }
}

impl GridConfig {
    pub fn long() -> Self {
        Self { sample_rate: 16_000, duration_s: 10.0, window_ms: 256.0, hop_ms: 64.0, ..Self::default() }
    }
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let mut grid = match &a.grid {
        Some(p) => serde_json::from_str::<GridConfig>(&read_text(p)?).map_err(|e| CliError::Config(e.to_string()))?,
        None if a.long => GridConfig::long(),
        None => GridConfig::default(),
    };
    if let Some(r) = a.repeats {
        grid.repeats = r;
    }
    if let Some(i) = a.iters {
        grid.iterations = i;
    }
    grid.scaling |= a.scaling;
    let scenario = Scenario {
        diffuse_tail: grid.diffuse_tail.clone(),
        ..Scenario::standard(grid.n_sources, grid.sample_rate, grid.duration_s)?
    };
    let truth = simulate(&scenario, grid.seed)?;
    let layout = BlockLayout::new(scenario.partition())?;
    let stft = StftConfig::from_ms(grid.sample_rate, grid.window_ms, grid.hop_ms)?;
    let x = stft_forward(&truth.mixture, &stft)?;
    let opts = InitOptions::new(grid.n_sources, grid.k_bases, grid.seed);
    let methods = bench_methods(&x, &layout, &grid.methods, &opts, grid.iterations, grid.repeats)?;
    for r in &methods {
        println!("{:12} {:9.3} +- {:.3} s over {} repeats", r.method, r.total.mean, r.total.std_err, r.repeats);
    }
    let mut scaling = Vec::new();
    if grid.scaling {
        let dims = ScalingDims { seed: grid.seed, ..ScalingDims::default() };
        for t in [bench_scaling_full(&[4, 8, 16, 32], &dims)?, bench_scaling_distributed(&[1, 2, 3, 4, 5, 6, 7, 8], 4, &dims)?] {
            println!("W-update slope vs {}: {:.2} (rms residual {:.3})", t.variable, t.w_fit.slope, t.w_fit.rms_residual);
            scaling.push(t);
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    write_bench_csv(&methods, create(&a.out.join("bench.csv"))?)?;
    let report = BenchReport { environment: Environment::capture(), methods, scaling };
    write_json(&a.out.join("bench.json"), &report)?;
    write_json(&a.out.join("grid.json"), &grid)?;
    Ok(())
}
