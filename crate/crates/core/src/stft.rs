//! Hann-windowed short-time Fourier transform and its weighted overlap-add
//! inverse.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermlin::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop_len: usize,
}

impl StftConfig {
    pub fn new(sample_rate: u32, window_len: usize, hop_len: usize) -> Result<Self> {
        let cfg = Self { sample_rate, window_len, hop_len };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Window and hop given in milliseconds, rounded to whole samples.
    pub fn from_ms(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        Self::new(sample_rate, to_samples(window_ms), to_samples(hop_ms))
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.window_len < self.hop_len || self.window_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "stft needs window_len >= hop_len >= 1 (got {} / {})",
                self.window_len, self.hop_len
            )));
        }
        if self.window_len % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "stft window_len must be even (got {})",
                self.window_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop_len + 1
        }
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        hann(self.window_len)
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect()
}

/// Complex observations `x_ijm` stored with the channel index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsTensor {
    n_freq: usize,
    n_frames: usize,
    n_chan: usize,
    data: Vec<C64>,
}

impl ObsTensor {
    pub fn zeros(n_freq: usize, n_frames: usize, n_chan: usize) -> Self {
        Self { n_freq, n_frames, n_chan, data: vec![C64::new(0.0, 0.0); n_freq * n_frames * n_chan] }
    }

    pub fn from_fn(
        n_freq: usize,
        n_frames: usize,
        n_chan: usize,
        mut f: impl FnMut(usize, usize, usize) -> C64,
    ) -> Self {
        let mut data = Vec::with_capacity(n_freq * n_frames * n_chan);
        for i in 0..n_freq {
            for j in 0..n_frames {
                for m in 0..n_chan {
                    data.push(f(i, j, m));
                }
            }
        }
        Self { n_freq, n_frames, n_chan, data }
    }

    pub fn from_vec(n_freq: usize, n_frames: usize, n_chan: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n_freq * n_frames * n_chan {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_freq}x{n_frames}x{n_chan} tensor",
                data.len()
            )));
        }
        Ok(Self { n_freq, n_frames, n_chan, data })
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_chan(&self) -> usize {
        self.n_chan
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_freq, self.n_frames, self.n_chan)
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, m: usize) -> C64 {
        self.data[(i * self.n_frames + j) * self.n_chan + m]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, m: usize, v: C64) {
        self.data[(i * self.n_frames + j) * self.n_chan + m] = v;
    }

    /// Observation vector `x_ij` across channels.
    #[inline]
    pub fn frame(&self, i: usize, j: usize) -> &[C64] {
        let start = (i * self.n_frames + j) * self.n_chan;
        &self.data[start..start + self.n_chan]
    }

    #[inline]
    pub fn frame_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let start = (i * self.n_frames + j) * self.n_chan;
        &mut self.data[start..start + self.n_chan]
    }

    /// All frames of bin `i`, `n_frames * n_chan` values.
    #[inline]
    pub fn bin(&self, i: usize) -> &[C64] {
        let len = self.n_frames * self.n_chan;
        &self.data[i * len..(i + 1) * len]
    }

    /// Channels `range` of every observation vector.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> ObsTensor {
        let width = range.len();
        let mut data = Vec::with_capacity(self.n_freq * self.n_frames * width);
        for chunk in self.data.chunks_exact(self.n_chan) {
            data.extend_from_slice(&chunk[range.clone()]);
        }
        ObsTensor { n_freq: self.n_freq, n_frames: self.n_frames, n_chan: width, data }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
}

fn check_channels(signal: &[Vec<f64>]) -> Result<usize> {
    let len = signal.first().map_or(0, |c| c.len());
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::ShapeMismatch("channels differ in length".into()));
    }
    Ok(len)
}

/// One-sided STFT of a multichannel signal. Frame `j` covers samples
/// `[j * hop, j * hop + window_len)`; trailing samples that do not fill a
/// frame are dropped.
pub fn stft_forward(signal: &[Vec<f64>], cfg: &StftConfig) -> Result<ObsTensor> {
    cfg.validate()?;
    let len = check_channels(signal)?;
    if signal.is_empty() {
        return Err(Error::ShapeMismatch("signal has no channels".into()));
    }
    if len < cfg.window_len {
        return Err(Error::SignalTooShort { len, needed: cfg.window_len });
    }
    let n = cfg.window_len;
    let n_freq = cfg.n_freq();
    let n_frames = cfg.n_frames(len);
    let n_chan = signal.len();
    let window = cfg.window();
    let fft = plans(n).forward;
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut out = ObsTensor::zeros(n_freq, n_frames, n_chan);
    for (m, chan) in signal.iter().enumerate() {
        for j in 0..n_frames {
            let start = j * cfg.hop_len;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = C64::new(chan[start + k] * window[k], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (i, &v) in buf[..n_freq].iter().enumerate() {
                out.set(i, j, m, v);
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse. Each sample is divided by the summed squared
/// window of the frames covering it, so reconstruction is exact wherever that
/// sum is not vanishingly small; other samples are set to zero.
pub fn stft_inverse(x: &ObsTensor, cfg: &StftConfig, out_len: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n = cfg.window_len;
    if x.n_freq() != cfg.n_freq() {
        return Err(Error::ShapeMismatch(format!(
            "{} frequency bins but the window implies {}",
            x.n_freq(),
            cfg.n_freq()
        )));
    }
    let window = cfg.window();
    let ifft = plans(n).inverse;
    let mut scratch = vec![C64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut norm = vec![0.0; out_len];
    for j in 0..x.n_frames() {
        let start = j * cfg.hop_len;
        for k in 0..n {
            if start + k < out_len {
                norm[start + k] += window[k] * window[k];
            }
        }
    }
    let peak = window.iter().map(|w| w * w).fold(0.0, f64::max);
    let mut out = vec![vec![0.0; out_len]; x.n_chan()];
    for (m, chan) in out.iter_mut().enumerate() {
        for j in 0..x.n_frames() {
            for i in 0..cfg.n_freq() {
                buf[i] = x.get(i, j, m);
            }
            for i in cfg.n_freq()..n {
                buf[i] = buf[n - i].conj();
            }
            // bins 0 and n/2 are real for a real frame
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = j * cfg.hop_len;
            for k in 0..n {
                if start + k < out_len {
                    chan[start + k] += buf[k].re / n as f64 * window[k];
                }
            }
        }
        for (s, &d) in chan.iter_mut().zip(&norm) {
            *s = if d > 1e-8 * peak { *s / d } else { 0.0 };
        }
    }
    Ok(out)
}

/// Zero padding that gives every original sample full window coverage, so
/// that an analysis/synthesis round trip reproduces the whole signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub front: usize,
    pub original_len: usize,
    pub padded_len: usize,
}

impl Padding {
    pub fn for_len(len: usize, cfg: &StftConfig) -> Self {
        let front = cfg.window_len - cfg.hop_len;
        let needed = front + len + front;
        let body = needed.max(cfg.window_len) - cfg.window_len;
        let frames = body.div_ceil(cfg.hop_len) + 1;
        let padded_len = (frames - 1) * cfg.hop_len + cfg.window_len;
        Self { front, original_len: len, padded_len }
    }

    pub fn apply(&self, signal: &[Vec<f64>]) -> Vec<Vec<f64>> {
        signal
            .iter()
            .map(|c| {
                let mut out = vec![0.0; self.padded_len];
                out[self.front..self.front + c.len()].copy_from_slice(c);
                out
            })
            .collect()
    }

    pub fn strip(&self, signal: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        signal
            .into_iter()
            .map(|c| c[self.front..self.front + self.original_len].to_vec())
            .collect()
    }
}

/// Pads, transforms and returns the padding needed to undo it.
pub fn analyze(signal: &[Vec<f64>], cfg: &StftConfig) -> Result<(ObsTensor, Padding)> {
    let len = check_channels(signal)?;
    let pad = Padding::for_len(len, cfg);
    Ok((stft_forward(&pad.apply(signal), cfg)?, pad))
}

/// Inverse of [`analyze`].
pub fn synthesize(x: &ObsTensor, cfg: &StftConfig, pad: &Padding) -> Result<Vec<Vec<f64>>> {
    Ok(pad.strip(stft_inverse(x, cfg, pad.padded_len)?))
}

/// Log-power spectrogram `10 log10(|x|^2 + eps)` of one channel, frame major.
pub fn log_power(x: &ObsTensor, channel: usize) -> Vec<Vec<f64>> {
    (0..x.n_frames())
        .map(|j| (0..x.n_freq()).map(|i| 10.0 * (x.get(i, j, channel).norm_sqr() + 1e-12).log10()).collect())
        .collect()
}
