//! WebAssembly bindings for the browser demo. Every export returns plain
//! strings, numbers or `Float32Array`s so the page needs no glue beyond the
//! generated module.

use dfmnmf::eval::{sdr_improvement, FILTER_LEN};
use dfmnmf::fastmnmf::FitOptions;
use dfmnmf::hermlin::{blkdiag, joint_diag_defect, BlockLayout, CMat, C64, JOINT_DIAG_TOL};
use dfmnmf::init::{InitOptions, Method};
use dfmnmf::mixsim::{simulate, DiffuseTail, GroundTruth, Scenario};
use dfmnmf::pipeline::separate_waveforms;
use dfmnmf::stft::{stft_forward, StftConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

const SAMPLE_RATE: u32 = 8000;
const WINDOW_MS: f64 = 64.0;
const HOP_MS: f64 = 16.0;
const K_BASES: usize = 8;
/// Spectrogram floor, dB below the peak.
const DB_RANGE: f64 = 80.0;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// A simulated scene and the most recent separation of it.
#[wasm_bindgen]
pub struct Demo {
    truth: GroundTruth,
    layout: BlockLayout,
    stft: StftConfig,
    /// `[n][t]` at the reference microphone, in estimate order.
    estimates: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl Demo {
    /// Three tetrahedral subarrays in a 6 x 4 m room with 3 or 5 sources,
    /// 8 kHz, with a short diffuse tail.
    #[wasm_bindgen(constructor)]
    pub fn new(n_sources: usize, duration_s: f64, seed: u64) -> Result<Demo, String> {
        let scenario = Scenario {
            diffuse_tail: Some(DiffuseTail { rt60_s: 0.3, drr_db: 10.0 }),
            ..Scenario::standard(n_sources, SAMPLE_RATE, duration_s).map_err(err)?
        };
        let truth = simulate(&scenario, seed).map_err(err)?;
        let layout = BlockLayout::new(scenario.partition()).map_err(err)?;
        let stft = StftConfig::from_ms(SAMPLE_RATE, WINDOW_MS, HOP_MS).map_err(err)?;
        Ok(Demo { truth, layout, stft, estimates: Vec::new() })
    }

    pub fn n_sources(&self) -> usize {
        self.truth.images.len()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    /// Separates with `method` (full, single, distributed, independent) and
    /// returns a JSON summary: cost trace, timings and SDR improvements.
    pub fn separate(&mut self, method: &str, iterations: usize, seed: u64) -> Result<String, String> {
        let method: Method = method.parse().map_err(err)?;
        let n_src = self.n_sources();
        let init = InitOptions::new(n_src, K_BASES, seed);
        let fit = FitOptions::new(iterations);
        let (run, waves) =
            separate_waveforms(&self.truth.mixture, &self.stft, &self.layout, method, &init, &fit).map_err(err)?;
        // The scene reference mic lies in the first subarray, so it indexes every
        // method's channel view alike.
        let r = self.truth.reference_mic;
        self.estimates = waves.into_iter().map(|w| w[r].clone()).collect();
        let mixture = &self.truth.mixture[r];
        let refs = self.truth.images_at(r);
        let report = sdr_improvement(mixture, &refs, &self.estimates, FILTER_LEN).map_err(err)?;
        let fit_report = &run.fit.report;
        Ok(json!({
            "method": method.name(),
            "channels": method.channels(&self.layout).len(),
            "iterations": fit_report.iterations,
            "cost_trace": fit_report.cost_trace,
            "seconds": fit_report.total_seconds(),
            "sdr_db": report.sdr_db,
            "improvement_db": report.improvement_db,
            "mean_improvement_db": report.mean_improvement(),
            "permutation": report.permutation,
        })
        .to_string())
    }

    /// Mixture at the reference microphone.
    pub fn mixture(&self) -> Vec<f32> {
        to_f32(&self.truth.mixture[self.truth.reference_mic])
    }

    /// True image of source `n` at the reference microphone.
    pub fn image(&self, n: usize) -> Vec<f32> {
        self.truth.images.get(n).map(|img| to_f32(&img[self.truth.reference_mic])).unwrap_or_default()
    }

    /// Separated estimate `n`; empty before the first separation.
    pub fn estimate(&self, n: usize) -> Vec<f32> {
        self.estimates.get(n).map(|e| to_f32(e)).unwrap_or_default()
    }

    /// Log-magnitude spectrogram of `which` ("mixture", "image" or
    /// "estimate", with index `n`), frame-major, scaled to [0, 1] over an
    /// 80 dB range. The bin count is [`Demo::n_bins`].
    pub fn spectrogram(&self, which: &str, n: usize) -> Result<Vec<f32>, String> {
        let signal = match which {
            "mixture" => self.truth.mixture[self.truth.reference_mic].clone(),
            "image" => self.truth.images.get(n).ok_or("no such source")?[self.truth.reference_mic].clone(),
            "estimate" => self.estimates.get(n).ok_or("no estimate yet")?.clone(),
            other => return Err(format!("unknown signal {other:?}")),
        };
        log_spectrogram(&signal, &self.stft)
    }

    pub fn n_bins(&self) -> usize {
        self.stft.n_freq()
    }
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

fn log_spectrogram(signal: &[f64], stft: &StftConfig) -> Result<Vec<f32>, String> {
    let x = stft_forward(&[signal.to_vec()], stft).map_err(err)?;
    let (ni, nj, _) = x.shape();
    let db: Vec<f64> = (0..nj)
        .flat_map(|j| (0..ni).map(move |i| (i, j)))
        .map(|(i, j)| 10.0 * (x.get(i, j, 0).norm_sqr().max(1e-20)).log10())
        .collect();
    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(db.iter().map(|&d| ((d - peak + DB_RANGE) / DB_RANGE).clamp(0.0, 1.0) as f32).collect())
}

fn rand_cmat(rng: &mut impl Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn psd_from(b: &CMat) -> CMat {
    let mut r = b.matmul(&b.adjoint());
    r.symmetrize();
    r
}

/// `n_src` PSD matrices of size `size`; sharing one congruence when
/// `diagonalizable`, independent otherwise.
fn block_family(rng: &mut impl Rng, size: usize, n_src: usize, diagonalizable: bool) -> Vec<CMat> {
    if !diagonalizable {
        return (0..n_src).map(|_| psd_from(&rand_cmat(rng, size))).collect();
    }
    let p = rand_cmat(rng, size).add(&CMat::identity(size));
    (0..n_src)
        .map(|_| {
            let d: Vec<f64> = (0..size).map(|_| rng.gen_range(0.1..2.0)).collect();
            let mut r = p.matmul(&CMat::from_real_diag(&d)).matmul(&p.adjoint());
            r.symmetrize();
            r
        })
        .collect()
}

/// Builds block-diagonal SCM families over the partition `sizes` (comma
/// separated). Blocks listed in `broken` (comma separated, zero based) get
/// generic SCMs; the rest are jointly diagonalizable by construction.
/// Returns JSON with the per-block and assembled defects and verdicts.
#[wasm_bindgen]
pub fn explore_joint_diag(sizes: &str, broken: &str, n_src: usize, seed: u64) -> Result<String, String> {
    let sizes = parse_list(sizes)?;
    let broken = parse_list(broken)?;
    let layout = BlockLayout::new(sizes.clone()).map_err(err)?;
    if let Some(&b) = broken.iter().find(|&&b| b >= layout.n_blocks()) {
        return Err(format!("block {b} is outside the {} blocks", layout.n_blocks()));
    }
    if n_src == 0 {
        return Err("need at least one source".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<Vec<CMat>> =
        sizes.iter().enumerate().map(|(l, &s)| block_family(&mut rng, s, n_src, !broken.contains(&l))).collect();
    let mut per_block = Vec::new();
    for (l, fam) in blocks.iter().enumerate() {
        let defect = joint_diag_defect(fam).map_err(err)?;
        per_block.push(json!({
            "block": l,
            "size": sizes[l],
            "defect": defect,
            "diagonalizable": defect <= JOINT_DIAG_TOL,
        }));
    }
    let assembled: Vec<CMat> = (0..n_src).map(|n| blkdiag(&blocks.iter().map(|b| b[n].clone()).collect::<Vec<_>>())).collect();
    let defect = joint_diag_defect(&assembled).map_err(err)?;
    Ok(json!({
        "channels": layout.total(),
        "tolerance": JOINT_DIAG_TOL,
        "blocks": per_block,
        "assembled_defect": defect,
        "assembled_diagonalizable": defect <= JOINT_DIAG_TOL,
    })
    .to_string())
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("{s:?} is not a count")))
        .collect()
}
