//! Synthetic mixtures: sampling from the generative model, anechoic
//! delay-and-attenuate impulse responses, convolutive mixing with
//! reference-microphone power normalization, and dry-source generators.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermlin::{CMat, Lu, C64};
use crate::model::BlockModel;
use crate::seed;
use crate::stft::ObsTensor;
use crate::wav::{write_wav, WavFormat};

/// Half-width of the windowed-sinc fractional delay, in samples.
const SINC_HALF: usize = 32;
const MIN_DISTANCE: f64 = 0.01;

/// A group of microphones, either a regular tetrahedron or explicit points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicGroup {
    /// Base parallel to the floor; with zero rotation one base edge is
    /// parallel to the x axis. Rotation is clockwise seen from above.
    Tetrahedron { centroid: [f64; 3], edge: f64, rotation_deg: f64 },
    Explicit { mics: Vec<[f64; 3]> },
}

impl MicGroup {
    pub fn positions(&self) -> Vec<[f64; 3]> {
        match self {
            MicGroup::Explicit { mics } => mics.clone(),
            MicGroup::Tetrahedron { centroid, edge, rotation_deg } => {
                let height = edge * (2.0f64 / 3.0).sqrt();
                let radius = edge / 3.0f64.sqrt();
                let rot = -rotation_deg.to_radians();
                let mut out = Vec::with_capacity(4);
                for deg in [90.0f64, 210.0, 330.0] {
                    let a = deg.to_radians() + rot;
                    out.push([
                        centroid[0] + radius * a.cos(),
                        centroid[1] + radius * a.sin(),
                        centroid[2] - height / 4.0,
                    ]);
                }
                out.push([centroid[0], centroid[1], centroid[2] + 0.75 * height]);
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DryKind {
    /// Resonant filtered noise under a slow on/off envelope.
    Noise,
    /// Harmonic tone with random pitch glide and amplitude modulation.
    Tone,
}

fn default_c() -> f64 {
    343.0
}

fn default_duration() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Room extent along x, y, z in metres; the origin is a corner.
    pub room: [f64; 3],
    pub subarrays: Vec<MicGroup>,
    pub sources: Vec<[f64; 3]>,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub reference_mic: usize,
    /// Dry signal type per source; cycles noise, tone when empty.
    #[serde(default)]
    pub dry: Vec<DryKind>,
    /// Independent white noise at every microphone, in dB below the unit
    /// image power at the reference microphone. Absent means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_snr_db: Option<f64>,
    /// Statistical late tail appended to every anechoic response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffuse_tail: Option<DiffuseTail>,
}

/// Exponentially decaying Gaussian tail, drawn independently for every
/// source and microphone, starting just after the direct-path pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffuseTail {
    /// Time for the tail energy to decay by 60 dB.
    pub rt60_s: f64,
    /// Direct-path energy over tail energy, in dB.
    pub drr_db: f64,
}

impl Scenario {
    /// Three tetrahedral subarrays on a line with the given source count
    /// (3 or 5), in a 6 x 4 x 2.5 m room at 1.5 m height.
    pub fn standard(n_sources: usize, sample_rate: u32, duration_s: f64) -> Result<Self> {
        let mut sources = vec![[1.0, 1.0, 1.5], [3.0, 3.5, 1.5], [5.0, 1.0, 1.5]];
        match n_sources {
            3 => {}
            5 => sources.extend([[1.5, 3.0, 1.5], [4.5, 3.0, 1.5]]),
            n => return Err(Error::InvalidConfig(format!("default geometry has 3 or 5 sources, not {n}"))),
        }
        let subarrays = [(2.0, 0.0), (3.0, 45.0), (4.0, 90.0)]
            .iter()
            .map(|&(x, rot)| MicGroup::Tetrahedron { centroid: [x, 2.0, 1.5], edge: 0.042, rotation_deg: rot })
            .collect();
        Ok(Scenario {
            room: [6.0, 4.0, 2.5],
            subarrays,
            sources,
            speed_of_sound: default_c(),
            sample_rate,
            duration_s,
            reference_mic: 0,
            dry: Vec::new(),
            sensor_snr_db: None,
            diffuse_tail: None,
        })
    }

    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        self.subarrays.iter().flat_map(|g| g.positions()).collect()
    }

    pub fn partition(&self) -> Vec<usize> {
        self.subarrays.iter().map(|g| g.positions().len()).collect()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }

    pub fn dry_kind(&self, n: usize) -> DryKind {
        if self.dry.is_empty() {
            if n % 2 == 0 {
                DryKind::Noise
            } else {
                DryKind::Tone
            }
        } else {
            self.dry[n % self.dry.len()]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sources.is_empty() {
            return bad("scenario has no sources".into());
        }
        let mics = self.mic_positions();
        if mics.is_empty() {
            return bad("scenario has no microphones".into());
        }
        if self.subarrays.iter().any(|g| g.positions().is_empty()) {
            return bad("empty subarray".into());
        }
        if self.sensor_snr_db.is_some_and(|v| !v.is_finite()) {
            return bad("sensor_snr_db must be finite".into());
        }
        if self.diffuse_tail.is_some_and(|t| !(t.rt60_s > 0.0) || !t.drr_db.is_finite()) {
            return bad("diffuse_tail needs a positive rt60_s and a finite drr_db".into());
        }
        if self.speed_of_sound <= 0.0 || self.sample_rate == 0 || self.duration_s <= 0.0 {
            return bad("speed_of_sound, sample_rate and duration_s must be positive".into());
        }
        if self.reference_mic >= mics.len() {
            return bad(format!("reference_mic {} but {} microphones", self.reference_mic, mics.len()));
        }
        let inside = |p: &[f64; 3]| p.iter().zip(&self.room).all(|(&v, &r)| v >= 0.0 && v <= r);
        if let Some(p) = mics.iter().chain(&self.sources).find(|p| !inside(p)) {
            return bad(format!("position {p:?} lies outside the room"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Impulse responses `[source][mic][tap]`.
pub type Rirs = Vec<Vec<Vec<f64>>>;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc fractional delay of `delay` samples with gain `gain`.
pub fn fractional_delay(delay: f64, gain: f64) -> Vec<f64> {
    let half = SINC_HALF as f64;
    let last = delay.floor() as usize + SINC_HALF;
    let first = (delay.floor() as usize + 1).saturating_sub(SINC_HALF);
    let mut h = vec![0.0; last + 1];
    for (n, tap) in h.iter_mut().enumerate().skip(first) {
        let x = n as f64 - delay;
        if x.abs() < half {
            // Blackman window keeps passband ripple near 1e-4
            let u = (x + half) / (2.0 * half);
            let w = 0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos();
            *tap = gain * w * sinc(x);
        }
    }
    h
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Anechoic responses: a delay of distance / c seconds with 1 / distance
/// amplitude.
pub fn delay_rirs(scenario: &Scenario) -> Result<Rirs> {
    let mics = scenario.mic_positions();
    let fs = f64::from(scenario.sample_rate);
    scenario
        .sources
        .iter()
        .enumerate()
        .map(|(n, src)| {
            mics.iter()
                .enumerate()
                .map(|(m, mic)| {
                    let d = distance(src, mic);
                    if d < MIN_DISTANCE {
                        return Err(Error::CoincidentPositions { source_index: n, mic: m });
                    }
                    Ok(fractional_delay(d / scenario.speed_of_sound * fs, 1.0 / d))
                })
                .collect()
        })
        .collect()
}

/// Appends a diffuse tail to every response in place.
pub fn add_diffuse_tail(rirs: &mut Rirs, scenario: &Scenario, tail: &DiffuseTail, seed: u64) -> Result<()> {
    let mics = scenario.mic_positions();
    let fs = f64::from(scenario.sample_rate);
    let len = (tail.rt60_s * fs).ceil() as usize;
    let decay = 3.0 * std::f64::consts::LN_10 / (tail.rt60_s * fs);
    for (n, src) in scenario.sources.iter().enumerate() {
        for (m, mic) in mics.iter().enumerate() {
            let onset = (distance(src, mic) / scenario.speed_of_sound * fs).floor() as usize + SINC_HALF + 1;
            let h = &mut rirs[n][m];
            let direct: f64 = h.iter().map(|v| v * v).sum();
            let mut rng = seed::rng(seed, "diffuse_tail", (n * mics.len() + m) as u64);
            let raw: Vec<f64> = (0..len)
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * (-decay * t as f64).exp()
                })
                .collect();
            let energy: f64 = raw.iter().map(|v| v * v).sum();
            if energy == 0.0 {
                continue;
            }
            let g = (direct * 10f64.powf(-tail.drr_db / 10.0) / energy).sqrt();
            if h.len() < onset + len {
                h.resize(onset + len, 0.0);
            }
            for (o, r) in h[onset..].iter_mut().zip(&raw) {
                *o += g * r;
            }
        }
    }
    Ok(())
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve_trim(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() > 128 && x.len() > 128 {
        return convolve_fft(x, h);
    }
    let mut out = vec![0.0; x.len()];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 || k >= x.len() {
            continue;
        }
        for (o, &xv) in out[k..].iter_mut().zip(x) {
            *o += hk * xv;
        }
    }
    out
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = rustfft::FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let to_buf = |v: &[f64]| {
        let mut b: Vec<C64> = v.iter().map(|&a| C64::new(a, 0.0)).collect();
        b.resize(n, C64::new(0.0, 0.0));
        b
    };
    let mut a = to_buf(x);
    let mut b = to_buf(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    planner.plan_fft_inverse(n).process(&mut a);
    a[..x.len()].iter().map(|v| v.re / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub dry: Vec<Vec<f64>>,
    /// `[source][mic][sample]`.
    pub images: Vec<Vec<Vec<f64>>>,
    /// `[mic][sample]`; the sum of the images plus `noise`.
    pub mixture: Vec<Vec<f64>>,
    /// Sensor noise `[mic][sample]`, empty for a noiseless mixture.
    pub noise: Vec<Vec<f64>>,
    pub reference_mic: usize,
}

impl GroundTruth {
    pub fn images_at(&self, mic: usize) -> Vec<Vec<f64>> {
        self.images.iter().map(|img| img[mic].clone()).collect()
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Convolves each dry source with its responses and scales it so that its
/// image has unit mean power at `reference_mic`.
pub fn convolve_mix(dry: &[Vec<f64>], rirs: &Rirs, reference_mic: usize) -> Result<GroundTruth> {
    if dry.len() != rirs.len() || dry.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} dry sources, {} response sets", dry.len(), rirs.len())));
    }
    let len = dry[0].len();
    let n_mic = rirs[0].len();
    if dry.iter().any(|d| d.len() != len) || rirs.iter().any(|r| r.len() != n_mic) {
        return Err(Error::ShapeMismatch("ragged sources or responses".into()));
    }
    if reference_mic >= n_mic {
        return Err(Error::IndexOutOfRange(format!("reference mic {reference_mic} of {n_mic}")));
    }
    let mut images = Vec::with_capacity(dry.len());
    for (n, (d, r)) in dry.iter().zip(rirs).enumerate() {
        if mean_power(d) == 0.0 {
            return Err(Error::SilentSource(n));
        }
        let mut img: Vec<Vec<f64>> = r.iter().map(|h| convolve_trim(d, h)).collect();
        let p = mean_power(&img[reference_mic]);
        if p == 0.0 {
            return Err(Error::SilentSource(n));
        }
        let g = 1.0 / p.sqrt();
        img.iter_mut().flatten().for_each(|v| *v *= g);
        images.push(img);
    }
    let mixture = (0..n_mic)
        .map(|m| (0..len).map(|t| images.iter().map(|img| img[m][t]).sum()).collect())
        .collect();
    Ok(GroundTruth { dry: dry.to_vec(), images, mixture, noise: Vec::new(), reference_mic })
}

/// Dry source of `len` samples.
pub fn generate_dry(kind: DryKind, len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let envelope = on_off_envelope(len, fs, rng);
    let mut out = match kind {
        DryKind::Noise => {
            // two-pole resonator at a random centre frequency
            let fc = rng.gen_range(0.03..0.25) * fs;
            let r: f64 = rng.gen_range(0.9..0.98);
            let a1 = 2.0 * r * (2.0 * PI * fc / fs).cos();
            let a2 = -r * r;
            let mut y1 = 0.0;
            let mut y2 = 0.0;
            (0..len)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(rng);
                    let y = e + a1 * y1 + a2 * y2;
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect::<Vec<f64>>()
        }
        DryKind::Tone => {
            let f0 = rng.gen_range(90.0..260.0);
            let glide = rng.gen_range(0.05..0.2);
            let rate = rng.gen_range(0.2..0.8);
            let n_harm = ((0.45 * fs / (f0 * (1.0 + glide))).floor() as usize).clamp(1, 30);
            let amps: Vec<f64> = (1..=n_harm).map(|h| rng.gen_range(0.3..1.0) / h as f64).collect();
            let mut phase = 0.0;
            (0..len)
                .map(|t| {
                    let f = f0 * (1.0 + glide * (2.0 * PI * rate * t as f64 / fs).sin());
                    phase += 2.0 * PI * f / fs;
                    amps.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum()
                })
                .collect()
        }
    };
    for (o, e) in out.iter_mut().zip(&envelope) {
        *o *= e;
    }
    let p = mean_power(&out).sqrt();
    if p > 0.0 {
        out.iter_mut().for_each(|v| *v /= p);
    }
    out
}

/// Random syllable-like bursts: segments of 80 to 400 ms that are either
/// active (raised-cosine edges) or near silent.
fn on_off_envelope(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = vec![0.0; len];
    let mut t = 0;
    let mut active = rng.gen_bool(0.5);
    while t < len {
        let seg = ((rng.gen_range(0.08..0.4) * fs) as usize).max(1).min(len - t);
        let level = if active { rng.gen_range(0.5..1.0) } else { 0.02 };
        let ramp = (seg / 8).max(1);
        for k in 0..seg {
            let edge = k.min(seg - 1 - k);
            let w = if edge < ramp && active { 0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos() } else { 1.0 };
            env[t + k] = (level * w).max(0.02);
        }
        t += seg;
        active = !active || rng.gen_bool(0.3);
    }
    env
}

/// Simulates a scenario: dry sources from `seed`, anechoic responses with
/// an optional diffuse tail, power-normalized mixing and optional sensor
/// noise.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<GroundTruth> {
    scenario.validate()?;
    let len = scenario.n_samples();
    let dry: Vec<Vec<f64>> = (0..scenario.sources.len())
        .map(|n| {
            let mut rng = seed::rng(seed, "dry", n as u64);
            generate_dry(scenario.dry_kind(n), len, scenario.sample_rate, &mut rng)
        })
        .collect();
    let mut rirs = delay_rirs(scenario)?;
    if let Some(tail) = &scenario.diffuse_tail {
        add_diffuse_tail(&mut rirs, scenario, tail, seed)?;
    }
    let mut truth = convolve_mix(&dry, &rirs, scenario.reference_mic)?;
    if let Some(snr) = scenario.sensor_snr_db {
        let sigma = 10f64.powf(-snr / 20.0);
        truth.noise = (0..truth.mixture.len())
            .map(|m| {
                let mut rng = seed::rng(seed, "sensor_noise", m as u64);
                (0..len).map(|_| sigma * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect()
            })
            .collect();
        for (mix, noise) in truth.mixture.iter_mut().zip(&truth.noise) {
            for (a, b) in mix.iter_mut().zip(noise) {
                *a += b;
            }
        }
    }
    Ok(truth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub reference_mic: usize,
    pub partition: Vec<usize>,
    pub mixture: PathBuf,
    /// One multichannel WAV per source image, relative to the manifest.
    pub images: Vec<PathBuf>,
    pub mic_positions: Vec<[f64; 3]>,
    pub source_positions: Vec<[f64; 3]>,
    pub scenario: Scenario,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes the mixture, the source images and `manifest.json` into `dir`.
pub fn write_ground_truth(dir: &Path, scenario: &Scenario, truth: &GroundTruth, seed: u64) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mixture = PathBuf::from("mixture.wav");
    write_wav(dir.join(&mixture), scenario.sample_rate, &truth.mixture, WavFormat::Float32)?;
    let mut images = Vec::new();
    for (n, img) in truth.images.iter().enumerate() {
        let name = PathBuf::from(format!("image_{n}.wav"));
        write_wav(dir.join(&name), scenario.sample_rate, img, WavFormat::Float32)?;
        images.push(name);
    }
    let manifest = Manifest {
        seed,
        sample_rate: scenario.sample_rate,
        reference_mic: truth.reference_mic,
        partition: scenario.partition(),
        mixture,
        images,
        mic_positions: scenario.mic_positions(),
        source_positions: scenario.sources.clone(),
        scenario: scenario.clone(),
    };
    std::fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Draws `c_ijn ~ CN(0, h_ijn R_in)` independently and returns the mixture
/// and the STFT-domain images. Each block factor is `W^{-H} Λ^{1/2}`, an
/// exact square root of the block SCM.
pub fn sample_model(model: &BlockModel, seed: u64) -> Result<(ObsTensor, Vec<ObsTensor>)> {
    model.validate()?;
    let s = &model.spatial;
    let (ni, nn, nm) = (s.n_freq, s.n_src, s.n_chan());
    let nj = model.nmf[0].n_frames;
    let layout = &s.layout;
    if s.lambda.iter().any(|&v| !(v >= 0.0)) {
        let (k, &v) = s.lambda.iter().enumerate().find(|(_, v)| !(**v >= 0.0)).expect("found above");
        return Err(Error::NotPositiveDefinite { pivot: k, value: v });
    }
    let spectrograms: Vec<Vec<f64>> = model.nmf.iter().map(|m| m.spectrogram()).collect();
    // factors[(i * L + l) * N + n]
    let mut factors: Vec<CMat> = Vec::with_capacity(ni * layout.n_blocks() * nn);
    for i in 0..ni {
        for l in 0..layout.n_blocks() {
            let w = s.w_block(i, l);
            let inv_h = Lu::factor(w).map_err(|_| Error::SingularDemixer { bin: i })?.inverse().adjoint();
            let r = layout.range(l);
            for n in 0..nn {
                let lam = &s.lambda_row(i, n)[r.clone()];
                factors.push(CMat::from_fn(r.len(), r.len(), |a, b| inv_h[(a, b)] * lam[b].sqrt()));
            }
        }
    }
    let mut images = vec![ObsTensor::zeros(ni, nj, nm); nn];
    let mut x = ObsTensor::zeros(ni, nj, nm);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..ni {
        for j in 0..nj {
            let mut rng = seed::rng(seed, "sample_model", (i * nj + j) as u64);
            for n in 0..nn {
                for l in 0..layout.n_blocks() {
                    let h = match model.mode {
                        crate::model::ShareMode::Shared => spectrograms[0][(i * nj + j) * nn + n],
                        crate::model::ShareMode::Independent => spectrograms[l][(i * nj + j) * nn + n],
                    };
                    let r = layout.range(l);
                    let z: Vec<C64> = (0..r.len())
                        .map(|_| {
                            let re: f64 = StandardNormal.sample(&mut rng);
                            let im: f64 = StandardNormal.sample(&mut rng);
                            C64::new(re, im) * half
                        })
                        .collect();
                    let c = factors[(i * layout.n_blocks() + l) * nn + n].matvec(&z);
                    let scale = h.max(0.0).sqrt();
                    let img = &mut images[n].frame_mut(i, j)[r.clone()];
                    for (o, v) in img.iter_mut().zip(&c) {
                        *o = v * scale;
                    }
                    let xs = &mut x.frame_mut(i, j)[r.clone()];
                    for (o, v) in xs.iter_mut().zip(&c) {
                        *o += v * scale;
                    }
                }
            }
        }
    }
    Ok((x, images))
}
