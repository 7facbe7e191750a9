//! Source-to-distortion ratio with an allowed FIR distortion filter,
//! permutation-resolved scoring and per-iteration SDR tracing.

use std::io::Write;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastmnmf::{FitObserver, FitSnapshot};
use crate::hermlin::C64;
use crate::separate::{reconstruct, wiener_block};
use crate::stft::{ObsTensor, Padding, StftConfig};

pub const FILTER_LEN: usize = 512;
/// Diagonal loading of the autocorrelation matrix, relative to lag zero.
const LOADING: f64 = 1e-10;
/// Largest source count scored by exhaustive permutation search.
const EXHAUSTIVE_MAX: usize = 6;

fn fft_len(n: usize) -> usize {
    n.next_power_of_two()
}

fn fft_real(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<C64> {
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    buf.resize(n, C64::new(0.0, 0.0));
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

fn ifft_real(mut buf: Vec<C64>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = buf.len();
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|v| v.re / n as f64).collect()
}

/// Solves the symmetric positive-definite Toeplitz system `T x = b`, with
/// `T` given by its first column `r`, by Levinson recursion.
pub fn levinson_solve(r: &[f64], b: &[f64]) -> Vec<f64> {
    let n = r.len();
    assert_eq!(n, b.len());
    let r0 = r[0];
    let rn: Vec<f64> = r.iter().map(|v| v / r0).collect();
    let bn: Vec<f64> = b.iter().map(|v| v / r0).collect();
    let mut x = vec![bn[0]];
    if n == 1 {
        return x;
    }
    let mut y = vec![-rn[1]];
    let mut alpha = -rn[1];
    let mut beta = 1.0;
    for k in 1..n {
        beta *= 1.0 - alpha * alpha;
        let dot: f64 = (0..k).map(|q| rn[q + 1] * x[k - 1 - q]).sum();
        let mu = (bn[k] - dot) / beta;
        let mut next: Vec<f64> = (0..k).map(|q| x[q] + mu * y[k - 1 - q]).collect();
        next.push(mu);
        x = next;
        if k < n - 1 {
            let dot: f64 = (0..k).map(|q| rn[q + 1] * y[k - 1 - q]).sum();
            alpha = (-rn[k + 1] - dot) / beta;
            let mut z: Vec<f64> = (0..k).map(|q| y[q] + alpha * y[k - 1 - q]).collect();
            z.push(alpha);
            y = z;
        }
    }
    x
}

/// SDR in dB of `estimate` against `reference`, allowing any FIR distortion
/// of the reference with `filter_len` taps.
pub fn sdr(reference: &[f64], estimate: &[f64], filter_len: usize) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.len() < 4 * filter_len {
        return Err(Error::SignalTooShort { len: reference.len(), needed: 4 * filter_len });
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateReference);
    }
    let t = reference.len();
    let out_len = t + filter_len - 1;
    let n = fft_len(out_len + filter_len);
    let mut planner = FftPlanner::new();
    let s_f = fft_real(reference, n, &mut planner);
    let e_f = fft_real(estimate, n, &mut planner);
    let auto = ifft_real(s_f.iter().map(|v| v.norm_sqr().into()).collect(), &mut planner);
    let cross = ifft_real(s_f.iter().zip(&e_f).map(|(a, b)| a.conj() * b).collect(), &mut planner);
    let mut r: Vec<f64> = auto[..filter_len].to_vec();
    r[0] *= 1.0 + LOADING;
    let coeffs = levinson_solve(&r, &cross[..filter_len]);
    let a_f = fft_real(&coeffs, n, &mut planner);
    let proj = ifft_real(s_f.iter().zip(&a_f).map(|(a, b)| a * b).collect(), &mut planner);
    let mut signal = 0.0;
    let mut noise = 0.0;
    for k in 0..out_len {
        let p = proj[k];
        let e = if k < t { estimate[k] } else { 0.0 } - p;
        signal += p * p;
        noise += e * e;
    }
    Ok(10.0 * (signal.log10() - noise.max(f64::MIN_POSITIVE).log10()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    /// `sdr_db[n]` scores estimate `permutation[n]` against reference `n`.
    pub sdr_db: Vec<f64>,
    pub permutation: Vec<usize>,
    /// Mixture SDR per reference, when computed.
    pub baseline_db: Vec<f64>,
    pub improvement_db: Vec<f64>,
}

impl SdrReport {
    pub fn mean_improvement(&self) -> f64 {
        mean(&self.improvement_db)
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr_db)
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("a larger element exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Assignment maximizing `Σ_n score[n][perm[n]]`; ties go to the
/// lexicographically smallest permutation.
pub fn best_assignment_exhaustive(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_val = f64::NEG_INFINITY;
    loop {
        let val: f64 = perm.iter().enumerate().map(|(r, &c)| score[r][c]).sum();
        if val > best_val {
            best_val = val;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best
}

/// Hungarian algorithm (maximization) for square score matrices.
pub fn best_assignment_hungarian(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let cost = |r: usize, c: usize| -score[r][c];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        p[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

pub fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    if score.len() <= EXHAUSTIVE_MAX {
        best_assignment_exhaustive(score)
    } else {
        best_assignment_hungarian(score)
    }
}

/// Full `N x N` SDR matrix, `[reference][estimate]`.
pub fn sdr_matrix(refs: &[Vec<f64>], ests: &[Vec<f64>], filter_len: usize) -> Result<Vec<Vec<f64>>> {
    refs.iter().map(|r| ests.iter().map(|e| sdr(r, e, filter_len)).collect()).collect()
}

/// SDRs under the permutation maximizing their sum.
pub fn sdr_permuted(refs: &[Vec<f64>], ests: &[Vec<f64>], filter_len: usize) -> Result<SdrReport> {
    if refs.len() != ests.len() || refs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} references and {} estimates",
            refs.len(),
            ests.len()
        )));
    }
    let matrix = sdr_matrix(refs, ests, filter_len)?;
    let permutation = best_assignment(&matrix);
    let sdr_db = permutation.iter().enumerate().map(|(r, &c)| matrix[r][c]).collect();
    Ok(SdrReport { sdr_db, permutation, baseline_db: Vec::new(), improvement_db: Vec::new() })
}

/// SDR improvement of each estimate over the unprocessed mixture, all at the
/// reference microphone.
pub fn sdr_improvement(
    mixture: &[f64],
    true_images: &[Vec<f64>],
    est_images: &[Vec<f64>],
    filter_len: usize,
) -> Result<SdrReport> {
    let mut report = sdr_permuted(true_images, est_images, filter_len)?;
    report.baseline_db =
        true_images.iter().map(|r| sdr(r, mixture, filter_len)).collect::<Result<Vec<_>>>()?;
    report.improvement_db = report.sdr_db.iter().zip(&report.baseline_db).map(|(s, b)| s - b).collect();
    Ok(report)
}

/// Plain energy-ratio SDR between complex sequences, with no distortion
/// filter. Used for STFT-domain images, which share the model's scale.
pub fn sdr_tf(reference: &[C64], estimate: &[C64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} bins", reference.len(), estimate.len())));
    }
    let signal: f64 = reference.iter().map(|c| c.norm_sqr()).sum();
    if signal == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let noise: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e).norm_sqr()).sum();
    Ok(10.0 * (signal.log10() - noise.max(f64::MIN_POSITIVE).log10()))
}

fn channel_tf(x: &ObsTensor, mic: usize) -> Vec<C64> {
    let (ni, nj, _) = x.shape();
    (0..ni).flat_map(|i| (0..nj).map(move |j| (i, j))).map(|(i, j)| x.get(i, j, mic)).collect()
}

/// STFT-domain counterpart of [`sdr_improvement`] at channel `mic`.
pub fn sdr_improvement_tf(
    mixture: &ObsTensor,
    true_images: &[ObsTensor],
    est_images: &[ObsTensor],
    mic: usize,
) -> Result<SdrReport> {
    if true_images.len() != est_images.len() || true_images.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} references and {} estimates",
            true_images.len(),
            est_images.len()
        )));
    }
    if mic >= mixture.n_chan() {
        return Err(Error::IndexOutOfRange(format!("channel {mic}")));
    }
    let refs: Vec<Vec<C64>> = true_images.iter().map(|x| channel_tf(x, mic)).collect();
    let ests: Vec<Vec<C64>> = est_images.iter().map(|x| channel_tf(x, mic)).collect();
    let mix = channel_tf(mixture, mic);
    let matrix = refs.iter().map(|r| ests.iter().map(|e| sdr_tf(r, e)).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
    let permutation = best_assignment(&matrix);
    let sdr_db: Vec<f64> = permutation.iter().enumerate().map(|(r, &c)| matrix[r][c]).collect();
    let baseline_db = refs.iter().map(|r| sdr_tf(r, &mix)).collect::<Result<Vec<_>>>()?;
    let improvement_db = sdr_db.iter().zip(&baseline_db).map(|(s, b)| s - b).collect();
    Ok(SdrReport { sdr_db, permutation, baseline_db, improvement_db })
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        f64::NAN
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Standard error of the mean (sample standard deviation over `sqrt(n)`).
    pub std_err: f64,
}

impl Summary {
    pub fn of(x: &[f64]) -> Self {
        let count = x.len();
        let m = mean(x);
        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = match count {
            0 => f64::NAN,
            c if c % 2 == 1 => sorted[c / 2],
            c => 0.5 * (sorted[c / 2 - 1] + sorted[c / 2]),
        };
        let std_err = if count > 1 {
            let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Self { count, mean: m, median, std_err }
    }
}

/// One row of the per-source SDR report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrRow {
    pub method: String,
    pub seed: u64,
    pub source: usize,
    pub sdr_db: f64,
    pub improvement_db: f64,
    /// Index of the estimate matched to this source.
    pub permutation: usize,
}

impl SdrRow {
    pub fn from_report(method: &str, seed: u64, report: &SdrReport) -> Vec<SdrRow> {
        (0..report.sdr_db.len())
            .map(|n| SdrRow {
                method: method.to_string(),
                seed,
                source: n,
                sdr_db: report.sdr_db[n],
                improvement_db: report.improvement_db.get(n).copied().unwrap_or(f64::NAN),
                permutation: report.permutation[n],
            })
            .collect()
    }
}

pub fn write_sdr_csv(rows: &[SdrRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-method summaries of the improvement column.
pub fn summarize_rows(rows: &[SdrRow]) -> std::collections::BTreeMap<String, Summary> {
    let mut by_method: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for r in rows {
        by_method.entry(r.method.clone()).or_default().push(r.improvement_db);
    }
    by_method.into_iter().map(|(k, v)| (k, Summary::of(&v))).collect()
}

/// One point of an SDR-versus-time trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cumulative_seconds: f64,
    pub cost: f64,
    pub mean_sdr_improvement: f64,
}

/// Observer that separates and scores the current model every `every`
/// iterations. Its work happens between sweeps and is not timed as
/// estimation.
pub struct SdrTracer<'a> {
    pub x: &'a ObsTensor,
    pub cfg: StftConfig,
    pub pad: Padding,
    pub reference_mic: usize,
    pub mixture: &'a [f64],
    pub true_images: &'a [Vec<f64>],
    pub filter_len: usize,
    pub floor: f64,
    /// `None` disables evaluation entirely.
    pub every: Option<usize>,
    pub rows: Vec<TraceRow>,
}

impl FitObserver for SdrTracer<'_> {
    fn wants(&self, iteration: usize) -> bool {
        matches!(self.every, Some(e) if e > 0 && iteration % e == 0)
    }

    fn observe(&mut self, snap: &FitSnapshot<'_>) -> Result<()> {
        let images = wiener_block(self.x, snap.model, self.floor)?;
        let waves = reconstruct(&images, &self.cfg, &self.pad)?;
        let est: Vec<Vec<f64>> = waves.into_iter().map(|mut w| w.swap_remove(self.reference_mic)).collect();
        let report = sdr_improvement(self.mixture, self.true_images, &est, self.filter_len)?;
        self.rows.push(TraceRow {
            iteration: snap.iteration,
            cumulative_seconds: snap.elapsed_seconds,
            cost: snap.cost,
            mean_sdr_improvement: report.mean_improvement(),
        });
        Ok(())
    }
}

pub fn write_trace_rows(rows: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermlin::{herm_solve, CMat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn delayed(x: &[f64], d: usize) -> Vec<f64> {
        (0..x.len()).map(|t| if t >= d { x[t - d] } else { 0.0 }).collect()
    }

    #[test]
    fn levinson_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sig = noise(2, 400);
        let n = 12;
        let r: Vec<f64> = (0..n).map(|k| (0..400 - k).map(|t| sig[t] * sig[t + k]).sum()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = levinson_solve(&r, &b);
        let t = CMat::from_fn(n, n, |a, c| C64::new(r[a.abs_diff(c)], 0.0));
        let dense = herm_solve(&t, &b.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>()).unwrap();
        for (a, d) in x.iter().zip(&dense) {
            assert!((a - d.re).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_and_scaled_estimates() {
        let s = noise(3, 4096);
        let exact = sdr(&s, &s, FILTER_LEN).unwrap();
        assert!(exact >= 100.0, "{exact}");
        let half: Vec<f64> = s.iter().map(|v| 0.5 * v).collect();
        let noisy: Vec<f64> = s.iter().zip(noise(4, 4096)).map(|(a, b)| a + 0.3 * b).collect();
        let noisy_scaled: Vec<f64> = noisy.iter().map(|v| -7.5 * v).collect();
        assert!(sdr(&s, &half, FILTER_LEN).unwrap() >= 100.0);
        let a = sdr(&s, &noisy, FILTER_LEN).unwrap();
        let b = sdr(&s, &noisy_scaled, FILTER_LEN).unwrap();
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn delays_inside_and_outside_the_filter() {
        // silent tail so delayed copies are not truncated
        let mut s = noise(5, 8192);
        s[8192 - 1100..].iter_mut().for_each(|v| *v = 0.0);
        assert!(sdr(&s, &delayed(&s, 100), FILTER_LEN).unwrap() >= 60.0);
        assert!(sdr(&s, &delayed(&s, 1000), FILTER_LEN).unwrap() < 0.0);
        let noisy: Vec<f64> = s.iter().zip(noise(6, 8192)).enumerate().map(|(t, (a, b))| if t < 8192 - 1100 { a + 0.5 * b } else { 0.0 }).collect();
        let base = sdr(&s, &noisy, FILTER_LEN).unwrap();
        for d in [1, 37, 255, 511] {
            let shifted = sdr(&s, &delayed(&noisy, d), FILTER_LEN).unwrap();
            assert!((shifted - base).abs() <= 0.5, "delay {d}: {shifted} vs {base}");
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(sdr(&[0.0; 4096], &[1.0; 4096], 512), Err(Error::DegenerateReference)));
        assert!(matches!(sdr(&[1.0; 100], &[1.0; 100], 512), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn planted_permutations_recovered() {
        for n in 1..=5 {
            let refs: Vec<Vec<f64>> = (0..n).map(|k| noise(10 + k as u64, 4096)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(n / 2);
            // estimate perm[r] holds reference r plus a little noise
            let mut ests = vec![Vec::new(); n];
            for r in 0..n {
                ests[perm[r]] = refs[r].iter().zip(noise(50 + r as u64, 4096)).map(|(a, b)| a + 0.1 * b).collect();
            }
            let report = sdr_permuted(&refs, &ests, 128).unwrap();
            assert_eq!(report.permutation, perm);
        }
    }

    #[test]
    fn hungarian_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            for _ in 0..30 {
                let score: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..n).map(|_| rng.gen_range(-10.0..30.0)).collect()).collect();
                let a = best_assignment_exhaustive(&score);
                let b = best_assignment_hungarian(&score);
                let val = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| score[r][c]).sum::<f64>();
                assert!((val(&a) - val(&b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let score = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(best_assignment_exhaustive(&score), vec![0, 1]);
    }

    #[test]
    fn improvement_definitions() {
        let a = noise(20, 4096);
        let b = noise(21, 4096);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let refs = vec![a.clone(), b.clone()];
        let copies = vec![mix.clone(), mix.clone()];
        let rep = sdr_improvement(&mix, &refs, &copies, FILTER_LEN).unwrap();
        assert!(rep.improvement_db.iter().all(|v| v.abs() < 0.1));

        let perfect = sdr_improvement(&mix, &refs, &refs, FILTER_LEN).unwrap();
        assert!(perfect.mean_improvement() > 50.0);

        let half = vec![a.clone(), mix.clone()];
        let rep = sdr_improvement(&mix, &refs, &half, FILTER_LEN).unwrap();
        let direct0 = sdr(&a, &half[rep.permutation[0]], FILTER_LEN).unwrap() - sdr(&a, &mix, FILTER_LEN).unwrap();
        let direct1 = sdr(&b, &half[rep.permutation[1]], FILTER_LEN).unwrap() - sdr(&b, &mix, FILTER_LEN).unwrap();
        assert!((rep.improvement_db[0] - direct0).abs() < 1e-12);
        assert!((rep.improvement_db[1] - direct1).abs() < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.count, 4);
        assert!((s.mean - 4.0).abs() < 1e-15);
        assert!((s.median - 2.5).abs() < 1e-15);
        let var: f64 = [9.0, 4.0, 1.0, 36.0].iter().sum::<f64>() / 3.0;
        assert!((s.std_err - (var / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tf_improvement_of_exact_images_and_mixture_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let imgs: Vec<ObsTensor> = (0..3)
            .map(|_| ObsTensor::from_fn(4, 6, 2, |_, _, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect();
        let mut mix = ObsTensor::zeros(4, 6, 2);
        for img in &imgs {
            for (m, v) in mix.as_mut_slice().iter_mut().zip(img.as_slice()) {
                *m += v;
            }
        }
        let swapped = vec![imgs[2].clone(), imgs[0].clone(), imgs[1].clone()];
        let rep = sdr_improvement_tf(&mix, &imgs, &swapped, 1).unwrap();
        assert_eq!(rep.permutation, vec![1, 2, 0]);
        assert!(rep.mean_improvement() > 100.0);
        let copies = vec![mix.clone(), mix.clone(), mix.clone()];
        let rep = sdr_improvement_tf(&mix, &imgs, &copies, 0).unwrap();
        assert!(rep.improvement_db.iter().all(|v| v.abs() < 1e-12));
        assert!(sdr_improvement_tf(&mix, &imgs, &copies, 2).is_err());
    }
}
