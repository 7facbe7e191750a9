//! Runtime benchmarks: matched-data method comparison and log-log scaling
//! of the demixer stage.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Summary;
use crate::fastmnmf::{FitOptions, StageTimes};
use crate::hermlin::{BlockLayout, CMat, C64};
use crate::init::{initialize, InitOptions, Method};
use crate::model::{BlockModel, NmfModel, SpatialModel};
use crate::pipeline::{fit_method, method_obs};
use crate::seed;
use crate::stft::ObsTensor;

pub const MIN_REPEATS: usize = 3;
pub const MIN_GRID: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchDims {
    pub n_freq: usize,
    pub n_frames: usize,
    pub n_chan: usize,
    pub n_src: usize,
    pub n_bases: usize,
    pub layout: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub dims: BenchDims,
    pub iterations: usize,
    pub repeats: usize,
    /// Total estimation seconds of each repeat.
    pub totals: Vec<f64>,
    pub total: Summary,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Mean per-stage seconds over repeats.
    pub stages: StageTimes,
}

/// Times `iters` sweeps of each method on the same observations and the
/// same initialization, `repeats` times, after one untimed warm-up sweep.
pub fn bench_methods(
    x: &ObsTensor,
    layout: &BlockLayout,
    methods: &[Method],
    init_opts: &InitOptions,
    iters: usize,
    repeats: usize,
) -> Result<Vec<BenchResult>> {
    if repeats < MIN_REPEATS {
        return Err(Error::InvalidConfig(format!("repeats must be at least {MIN_REPEATS}, got {repeats}")));
    }
    let mut out = Vec::new();
    for &method in methods {
        let init = initialize(x, layout, method, init_opts)?;
        let xm = method_obs(x, layout, method);
        fit_method(&xm, method, init.model.clone(), &FitOptions::new(1), None)?;
        let mut totals = Vec::with_capacity(repeats);
        let mut stages = StageTimes::default();
        for _ in 0..repeats {
            let fit = fit_method(&xm, method, init.model.clone(), &FitOptions::new(iters), None)?;
            totals.push(fit.report.total_seconds());
            let s = fit.report.stages;
            stages.w_update += s.w_update / repeats as f64;
            stages.mm_update += s.mm_update / repeats as f64;
            stages.eta += s.eta / repeats as f64;
            stages.decorrelate += s.decorrelate / repeats as f64;
        }
        let (ni, nj, nm) = xm.shape();
        out.push(BenchResult {
            method: method.name().to_string(),
            dims: BenchDims {
                n_freq: ni,
                n_frames: nj,
                n_chan: nm,
                n_src: init_opts.n_src,
                n_bases: init_opts.n_bases,
                layout: method.model_layout(layout).sizes().to_vec(),
            },
            iterations: iters,
            repeats,
            total: Summary::of(&totals),
            min_seconds: totals.iter().copied().fold(f64::INFINITY, f64::min),
            max_seconds: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            totals,
            stages,
        });
    }
    Ok(out)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in natural-log units.
    pub rms_residual: f64,
}

pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("slope fit needs paired samples".into()));
    }
    if x.len() < MIN_GRID {
        return Err(Error::InsufficientGrid { needed: MIN_GRID, got: x.len() });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("scaling grid needs distinct values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(SlopeFit { slope, intercept, rms_residual: (rss / n).sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// The varied quantity: `M` for the full array, `L` for distributed.
    pub value: usize,
    pub layout: Vec<usize>,
    /// Seconds per sweep, each the minimum over repeats.
    pub w_update: f64,
    pub mm_update: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub variable: String,
    pub rows: Vec<ScalingRow>,
    pub w_fit: SlopeFit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingDims {
    pub n_freq: usize,
    pub n_frames: usize,
    pub n_src: usize,
    pub n_bases: usize,
    /// Minimum sweeps per repeat.
    pub iters: usize,
    /// Sweeps per repeat are raised until a repeat lasts about this long.
    pub min_seconds: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingDims {
    fn default() -> Self {
        Self { n_freq: 16, n_frames: 48, n_src: 3, n_bases: 4, iters: 3, min_seconds: 0.2, repeats: 7, seed: 0 }
    }
}

/// Random observations and a random well-conditioned model for `layout`.
pub fn synthetic_problem(layout: &BlockLayout, dims: &ScalingDims) -> (ObsTensor, BlockModel) {
    use rand::Rng;
    let mut rng = seed::rng(dims.seed, "bench_problem", layout.total() as u64 * 64 + layout.n_blocks() as u64);
    let (ni, nj, nn, nk) = (dims.n_freq, dims.n_frames, dims.n_src, dims.n_bases);
    let x = ObsTensor::from_fn(ni, nj, layout.total(), |_, _, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let t = (0..ni * nk * nn).map(|_| rng.gen_range(0.1..1.0)).collect();
    let v = (0..nk * nj * nn).map(|_| rng.gen_range(0.1..1.0)).collect();
    let nmf = NmfModel { n_freq: ni, n_frames: nj, n_bases: nk, n_src: nn, t, v };
    let w = (0..ni)
        .flat_map(|_| {
            layout
                .sizes()
                .iter()
                .map(|&s| CMat::from_fn(s, s, |r, c| C64::new(if r == c { 1.0 } else { 0.0 } + rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))))
                .collect::<Vec<_>>()
        })
        .collect();
    let lambda = (0..ni * nn * layout.total()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let spatial = SpatialModel { layout: layout.clone(), n_freq: ni, n_src: nn, w, lambda };
    (x, BlockModel::shared(nmf, spatial))
}

struct GridPoint {
    x: ObsTensor,
    model: BlockModel,
    method: Method,
    iters: usize,
    row: ScalingRow,
}

/// Times every layout, cycling through the grid once per repeat so slow
/// phases of the host hit all points alike. Each stage keeps its minimum.
fn time_grid(points: Vec<(usize, BlockLayout)>, dims: &ScalingDims) -> Result<Vec<ScalingRow>> {
    let mut grid = Vec::with_capacity(points.len());
    for (value, layout) in points {
        let (x, model) = synthetic_problem(&layout, dims);
        let method = if layout.n_blocks() == 1 { Method::Full } else { Method::Distributed };
        let warm = fit_method(&x, method, model.clone(), &FitOptions::new(1), None)?;
        // Enough sweeps per repeat that the timed span dwarfs timer noise.
        let per_sweep = warm.report.total_seconds().max(1e-6);
        let iters = ((dims.min_seconds / per_sweep).ceil() as usize).clamp(dims.iters.max(1), 10_000);
        let row = ScalingRow {
            value,
            layout: layout.sizes().to_vec(),
            w_update: f64::INFINITY,
            mm_update: f64::INFINITY,
            total: f64::INFINITY,
        };
        grid.push(GridPoint { x, model, method, iters, row });
    }
    for _ in 0..dims.repeats.max(1) {
        for p in grid.iter_mut() {
            let fit = fit_method(&p.x, p.method, p.model.clone(), &FitOptions::new(p.iters), None)?;
            let per = |s: f64| s / p.iters as f64;
            p.row.w_update = p.row.w_update.min(per(fit.report.stages.w_update));
            p.row.mm_update = p.row.mm_update.min(per(fit.report.stages.mm_update));
            p.row.total = p.row.total.min(per(fit.report.total_seconds()));
        }
    }
    Ok(grid.into_iter().map(|p| p.row).collect())
}

/// Demixer-stage time of the full-array estimator against `M`.
pub fn bench_scaling_full(m_grid: &[usize], dims: &ScalingDims) -> Result<ScalingTable> {
    if m_grid.len() < MIN_GRID {
        return Err(Error::InsufficientGrid { needed: MIN_GRID, got: m_grid.len() });
    }
    finish("M", time_grid(m_grid.iter().map(|&m| (m, BlockLayout::single(m))).collect(), dims)?)
}

/// Demixer-stage time of the distributed estimator against `L` at fixed
/// subarray size.
pub fn bench_scaling_distributed(l_grid: &[usize], subarray_size: usize, dims: &ScalingDims) -> Result<ScalingTable> {
    if l_grid.len() < MIN_GRID {
        return Err(Error::InsufficientGrid { needed: MIN_GRID, got: l_grid.len() });
    }
    let points = l_grid
        .iter()
        .map(|&l| Ok((l, BlockLayout::uniform(l, subarray_size)?)))
        .collect::<Result<Vec<_>>>()?;
    finish("L", time_grid(points, dims)?)
}

fn finish(variable: &str, rows: Vec<ScalingRow>) -> Result<ScalingTable> {
    let xs: Vec<f64> = rows.iter().map(|r| r.value as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.w_update.max(1e-12)).collect();
    let w_fit = loglog_slope(&xs, &ys)?;
    Ok(ScalingTable { variable: variable.to_string(), rows, w_fit })
}

/// Build and host details recorded with benchmark output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
    pub optimized: bool,
    pub crate_version: String,
}

impl Environment {
    pub fn capture() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu_model,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            optimized: !cfg!(debug_assertions),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub methods: Vec<BenchResult>,
    #[serde(default)]
    pub scaling: Vec<ScalingTable>,
}

#[derive(Serialize)]
struct BenchCsvRow<'a> {
    method: &'a str,
    n_freq: usize,
    n_frames: usize,
    n_chan: usize,
    n_src: usize,
    n_bases: usize,
    layout: String,
    iterations: usize,
    repeats: usize,
    mean_seconds: f64,
    se_seconds: f64,
    min_seconds: f64,
    max_seconds: f64,
    w_update: f64,
    mm_update: f64,
    eta: f64,
    decorrelate: f64,
}

pub fn write_bench_csv(results: &[BenchResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(BenchCsvRow {
            method: &r.method,
            n_freq: r.dims.n_freq,
            n_frames: r.dims.n_frames,
            n_chan: r.dims.n_chan,
            n_src: r.dims.n_src,
            n_bases: r.dims.n_bases,
            layout: r.dims.layout.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            iterations: r.iterations,
            repeats: r.repeats,
            mean_seconds: r.total.mean,
            se_seconds: r.total.std_err,
            min_seconds: r.min_seconds,
            max_seconds: r.max_seconds,
            w_update: r.stages.w_update,
            mm_update: r.stages.mm_update,
            eta: r.stages.eta,
            decorrelate: r.stages.decorrelate,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::sample_model;

    #[test]
    fn slope_of_exact_power_law() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 0.5 * v.powf(3.0)).collect();
        let fit = loglog_slope(&x, &y).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
        assert!(matches!(loglog_slope(&x[..3], &y[..3]), Err(Error::InsufficientGrid { needed: 4, got: 3 })));
    }

    #[test]
    fn grids_must_have_four_points() {
        let dims = ScalingDims { n_freq: 2, n_frames: 8, iters: 1, repeats: 1, ..Default::default() };
        assert!(matches!(bench_scaling_full(&[2, 3, 4], &dims), Err(Error::InsufficientGrid { .. })));
        assert!(matches!(bench_scaling_distributed(&[1, 2], 2, &dims), Err(Error::InsufficientGrid { .. })));
    }

    #[test]
    fn tiny_method_bench_populates_fields() {
        let layout = BlockLayout::new(vec![2, 2]).unwrap();
        let (_, model) = synthetic_problem(&layout, &ScalingDims { n_freq: 4, n_frames: 12, n_src: 2, n_bases: 2, ..Default::default() });
        let (x, _) = sample_model(&model, 1).unwrap();
        let opts = InitOptions { nmf_max_iter: 20, ..InitOptions::new(2, 2, 0) };
        let res = bench_methods(&x, &layout, &[Method::Single, Method::Distributed, Method::Full], &opts, 2, 3).unwrap();
        assert_eq!(res.len(), 3);
        for r in &res {
            assert_eq!(r.repeats, 3);
            assert_eq!(r.totals.len(), 3);
            assert!(r.total.std_err >= 0.0 && r.total.std_err.is_finite());
            assert!(r.min_seconds <= r.total.mean && r.total.mean <= r.max_seconds);
            assert!(r.stages.total() <= 1.05 * r.total.mean + 1e-4);
        }
        assert_eq!(res[0].dims.n_chan, 2);
        assert!(bench_methods(&x, &layout, &[Method::Full], &opts, 1, 2).is_err());
        let mut buf = Vec::new();
        write_bench_csv(&res, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn scaling_tables_have_one_row_per_grid_point() {
        let dims = ScalingDims { n_freq: 2, n_frames: 10, n_bases: 2, iters: 1, min_seconds: 0.0, repeats: 1, ..Default::default() };
        let t = bench_scaling_full(&[2, 3, 4, 5], &dims).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.w_fit.slope.is_finite());
        let d = bench_scaling_distributed(&[1, 2, 3, 4], 2, &dims).unwrap();
        assert_eq!(d.rows.iter().map(|r| r.layout.len()).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
