//! FastMNMF estimation: cost, iterative-projection demixer updates and
//! multiplicative NMF/Λ updates, over an arbitrary block layout.
//!
//! The full-array estimator is the one-block case of the same engine, so the
//! full, single-subarray and distributed methods share every kernel.

use std::io::Write;
use std::ops::Range;
use std::path::Path;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;
#[cfg(target_arch = "wasm32")]
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermlin::{pinv_solve, CMat, Lu, C64};
use crate::model::{demix_into, BlockModel, NmfModel, ShareMode, SpatialModel, FLOOR};
use crate::stft::ObsTensor;

/// Smallest value passed to `ln` when evaluating the cost.
const LOG_CLAMP: f64 = 1e-300;
/// Leaf size of the pairwise reduction over frames.
const PAIRWISE_LEAF: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iters: usize,
    pub floor: f64,
}

impl FitOptions {
    pub fn new(iters: usize) -> Self {
        Self { iters, floor: FLOOR }
    }
}

/// Accumulated wall time per estimation stage, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub w_update: f64,
    pub mm_update: f64,
    pub eta: f64,
    pub decorrelate: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.w_update + self.mm_update + self.eta + self.decorrelate
    }

    fn add(&mut self, other: &StageTimes) {
        self.w_update += other.w_update;
        self.mm_update += other.mm_update;
        self.eta += other.eta;
        self.decorrelate += other.decorrelate;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Cost before the first sweep followed by the cost after every sweep.
    pub cost_trace: Vec<f64>,
    /// Estimation wall time of each sweep; cost evaluation is not included.
    pub iter_seconds: Vec<f64>,
    pub stages: StageTimes,
    pub iterations: usize,
}

impl FitReport {
    pub fn total_seconds(&self) -> f64 {
        self.iter_seconds.iter().fold(0.0, |a, b| a + b)
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("cost trace always holds the initial cost")
    }

    /// `(iteration, cost, wall_seconds)` with cumulative wall time.
    pub fn write_trace_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "cost", "wall_seconds"])?;
        let mut elapsed = 0.0;
        for (it, cost) in self.cost_trace.iter().enumerate() {
            if it > 0 {
                elapsed += self.iter_seconds[it - 1];
            }
            w.write_record([it.to_string(), format!("{cost:.17e}"), format!("{elapsed:.9}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_trace_csv(std::fs::File::create(path)?)
    }
}

/// Snapshot handed to a [`FitObserver`]; `iteration` 0 is the initial model.
pub struct FitSnapshot<'a> {
    pub iteration: usize,
    pub cost: f64,
    pub elapsed_seconds: f64,
    pub model: &'a BlockModel,
}

/// Hook for per-iteration inspection. Time spent here is not attributed to
/// estimation.
pub trait FitObserver {
    fn wants(&self, iteration: usize) -> bool;
    fn observe(&mut self, snapshot: &FitSnapshot<'_>) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub model: BlockModel,
    pub report: FitReport,
}

/// Mutable estimation state for one NMF model and one block-diagonal spatial
/// model, with the caches `h`, `η` and `|y|^2` kept consistent.
pub struct Estimator<'a> {
    x: &'a ObsTensor,
    nmf: NmfModel,
    spatial: SpatialModel,
    floor: f64,
    h: Vec<f64>,
    eta: Vec<f64>,
    eta_raw: Vec<f64>,
    pow_y: Vec<f64>,
    num: Vec<f64>,
    outer: Vec<C64>,
    times: StageTimes,
}

impl<'a> Estimator<'a> {
    pub fn new(x: &'a ObsTensor, nmf: NmfModel, spatial: SpatialModel, floor: f64) -> Result<Self> {
        nmf.validate()?;
        spatial.validate()?;
        let (ni, nj, nm) = x.shape();
        if spatial.n_chan() != nm || spatial.n_freq != ni || nmf.n_freq != ni {
            return Err(Error::ShapeMismatch(format!(
                "observations are {ni}x{nj}x{nm}, model expects {} bins and {} channels",
                spatial.n_freq,
                spatial.n_chan()
            )));
        }
        if nmf.n_frames != nj || nmf.n_src != spatial.n_src {
            return Err(Error::ShapeMismatch(format!(
                "NMF model has {} frames and {} sources, observations {nj} frames, spatial model {} sources",
                nmf.n_frames, nmf.n_src, spatial.n_src
            )));
        }
        if !(floor > 0.0) {
            return Err(Error::InvalidConfig(format!("floor must be positive (got {floor})")));
        }
        let nn = nmf.n_src;
        let mut est = Self {
            x,
            nmf,
            spatial,
            floor,
            h: vec![0.0; ni * nj * nn],
            eta: vec![0.0; ni * nj * nm],
            eta_raw: vec![0.0; ni * nj * nm],
            pow_y: vec![0.0; ni * nj * nm],
            num: Vec::new(),
            outer: Vec::new(),
            times: StageTimes::default(),
        };
        est.decorrelate();
        est.refresh_spectrogram();
        est.refresh_eta();
        Ok(est)
    }

    pub fn nmf(&self) -> &NmfModel {
        &self.nmf
    }

    pub fn spatial(&self) -> &SpatialModel {
        &self.spatial
    }

    pub fn into_parts(self) -> (NmfModel, SpatialModel) {
        (self.nmf, self.spatial)
    }

    pub fn stage_times(&self) -> StageTimes {
        self.times
    }

    /// Floored `η_ijm`, laid out `(i, j, m)`.
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// `|y_ijm|^2` for the current demixers.
    pub fn pow_y(&self) -> &[f64] {
        &self.pow_y
    }

    /// Recomputes `|y_ij|^2 = |W_i^H x_ij|^2` blockwise.
    pub fn decorrelate(&mut self) {
        let start = Instant::now();
        let (ni, nj, nm) = self.x.shape();
        let layout = self.spatial.layout.clone();
        let mut y = vec![C64::new(0.0, 0.0); nm];
        for i in 0..ni {
            for j in 0..nj {
                let x = self.x.frame(i, j);
                for l in 0..layout.n_blocks() {
                    let r = layout.range(l);
                    demix_into(self.spatial.w_block(i, l), &x[r.clone()], &mut y[r]);
                }
                let p = &mut self.pow_y[(i * nj + j) * nm..(i * nj + j + 1) * nm];
                for (pv, yv) in p.iter_mut().zip(&y) {
                    *pv = yv.norm_sqr();
                }
            }
        }
        self.times.decorrelate += start.elapsed().as_secs_f64();
    }

    fn refresh_spectrogram(&mut self) {
        let (nj, nk, nn) = (self.nmf.n_frames, self.nmf.n_bases, self.nmf.n_src);
        self.h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.nmf.n_freq {
            for k in 0..nk {
                let t_ik = &self.nmf.t[(i * nk + k) * nn..(i * nk + k + 1) * nn];
                for j in 0..nj {
                    let v_kj = &self.nmf.v[(k * nj + j) * nn..(k * nj + j + 1) * nn];
                    let h_ij = &mut self.h[(i * nj + j) * nn..(i * nj + j + 1) * nn];
                    for n in 0..nn {
                        h_ij[n] += t_ik[n] * v_kj[n];
                    }
                }
            }
        }
    }

    fn refresh_eta(&mut self) {
        let (ni, nj, nm) = self.x.shape();
        let nn = self.nmf.n_src;
        for i in 0..ni {
            let raw = &mut self.eta_raw[i * nj * nm..(i + 1) * nj * nm];
            raw.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..nj {
                let h_ij = &self.h[(i * nj + j) * nn..(i * nj + j + 1) * nn];
                let row = &mut raw[j * nm..(j + 1) * nm];
                for (n, &h) in h_ij.iter().enumerate() {
                    for (r, &lam) in row.iter_mut().zip(self.spatial.lambda_row(i, n)) {
                        *r += h * lam;
                    }
                }
            }
        }
        let floor = self.floor;
        for (e, &r) in self.eta.iter_mut().zip(&self.eta_raw) {
            *e = r.max(floor);
        }
    }

    /// Recomputes `h` and `η` after an NMF or Λ change.
    fn refresh_model(&mut self, spectrogram_changed: bool) {
        let start = Instant::now();
        if spectrogram_changed {
            self.refresh_spectrogram();
        }
        self.refresh_eta();
        self.times.eta += start.elapsed().as_secs_f64();
    }

    /// Cost evaluated from the caches; they must be fresh.
    pub fn cost(&self) -> Result<f64> {
        let (ni, nj, nm) = self.x.shape();
        let mut total = 0.0;
        for i in 0..ni {
            let mut acc = 0.0;
            let base = i * nj * nm;
            for k in base..base + nj * nm {
                acc += self.pow_y[k] / self.eta[k] + self.eta_raw[k].max(LOG_CLAMP).ln();
            }
            for l in 0..self.spatial.n_blocks() {
                let lu = Lu::factor(self.spatial.w_block(i, l))
                    .map_err(|_| Error::SingularDemixer { bin: i })?;
                acc -= nj as f64 * lu.ln_abs_det_sq();
            }
            total += acc;
        }
        Ok(total)
    }

    /// Outer products `x_a conj(x_b)` (upper triangle) of block `l` at bin `i`.
    fn fill_outer(&mut self, i: usize, range: Range<usize>) {
        let nj = self.x.n_frames();
        let size = range.len();
        let p = size * (size + 1) / 2;
        self.outer.resize(nj * p, C64::new(0.0, 0.0));
        for j in 0..nj {
            let x = &self.x.frame(i, j)[range.clone()];
            let out = &mut self.outer[j * p..(j + 1) * p];
            let mut idx = 0;
            for a in 0..size {
                for b in a..size {
                    out[idx] = x[a] * x[b].conj();
                    idx += 1;
                }
            }
        }
    }

    /// Updates column `mu` of `W_i^(l)`; `fill_outer` must hold bin `i`, block `l`.
    fn ip_column(&mut self, i: usize, l: usize, mu: usize) {
        let (_, nj, nm) = self.x.shape();
        let range = self.spatial.layout.range(l);
        let size = range.len();
        let p = size * (size + 1) / 2;
        let m = range.start + mu;
        self.num.clear();
        self.num.extend((0..nj).map(|j| 1.0 / self.eta[(i * nj + j) * nm + m]));
        let mut tri = vec![C64::new(0.0, 0.0); p];
        let depth = (usize::BITS - (nj / PAIRWISE_LEAF + 1).leading_zeros()) as usize + 1;
        let mut scratch = vec![C64::new(0.0, 0.0); p * depth];
        pairwise_weighted_sum(&self.outer, &self.num, p, 0, nj, &mut tri, &mut scratch);
        let inv_j = 1.0 / nj as f64;
        let mut q = CMat::zeros(size, size);
        let mut idx = 0;
        for a in 0..size {
            for b in a..size {
                let v = tri[idx] * inv_j;
                q[(a, b)] = v;
                q[(b, a)] = v.conj();
                idx += 1;
            }
            q[(a, a)].im = 0.0;
        }
        let w = self.spatial.w_block(i, l);
        let a = w.adjoint_matmul(&q);
        let mut e = vec![C64::new(0.0, 0.0); size];
        e[mu] = C64::new(1.0, 0.0);
        let mut col = match Lu::factor(&a) {
            Ok(lu) => lu.solve(&e),
            Err(_) => pinv_solve(&a, &e),
        };
        if col.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            col = pinv_solve(&a, &e);
        }
        let qw = q.matvec(&col);
        let quad: f64 = col.iter().zip(&qw).map(|(c, d)| (c.conj() * d).re).sum();
        let scale = 1.0 / quad.max(self.floor).sqrt();
        col.iter_mut().for_each(|c| *c *= scale);
        self.spatial.w_block_mut(i, l).set_column(mu, &col);
    }

    /// IP update of column `mu` of every `W_i^(l)`. Leaves `|y|^2` stale.
    pub fn ip_update(&mut self, l: usize, mu: usize) {
        let start = Instant::now();
        let range = self.spatial.layout.range(l);
        assert!(mu < range.len(), "column {mu} outside block {l}");
        for i in 0..self.x.n_freq() {
            self.fill_outer(i, range.clone());
            self.ip_column(i, l, mu);
        }
        self.times.w_update += start.elapsed().as_secs_f64();
    }

    /// IP updates of every column of every block, ascending, then
    /// decorrelation. Same arithmetic as calling [`Estimator::ip_update`] for
    /// each `(l, mu)` in order.
    pub fn ip_sweep(&mut self) {
        let start = Instant::now();
        let layout = self.spatial.layout.clone();
        for i in 0..self.x.n_freq() {
            for l in 0..layout.n_blocks() {
                self.fill_outer(i, layout.range(l));
                for mu in 0..layout.size(l) {
                    self.ip_column(i, l, mu);
                }
            }
        }
        self.times.w_update += start.elapsed().as_secs_f64();
        self.decorrelate();
    }

    /// `a_ijn = Σ_m λ_inm |y_ijm|^2 / η_ijm^2` into `num`, `b_ijn = Σ_m λ_inm / η_ijm` into `den`.
    fn mm_terms(&mut self) -> (Vec<f64>, Vec<f64>) {
        let (ni, nj, nm) = self.x.shape();
        let nn = self.nmf.n_src;
        let mut a = vec![0.0; ni * nj * nn];
        let mut b = vec![0.0; ni * nj * nn];
        let mut r1 = vec![0.0; nm];
        let mut r2 = vec![0.0; nm];
        for i in 0..ni {
            for j in 0..nj {
                let base = (i * nj + j) * nm;
                for m in 0..nm {
                    let inv = 1.0 / self.eta[base + m];
                    r2[m] = inv;
                    r1[m] = self.pow_y[base + m] * inv * inv;
                }
                for n in 0..nn {
                    let lam = self.spatial.lambda_row(i, n);
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for m in 0..nm {
                        sa += lam[m] * r1[m];
                        sb += lam[m] * r2[m];
                    }
                    a[(i * nj + j) * nn + n] = sa;
                    b[(i * nj + j) * nn + n] = sb;
                }
            }
        }
        (a, b)
    }

    /// Multiplicative update of the bases `t_ikn`, then `η` refresh.
    pub fn update_t(&mut self) {
        let start = Instant::now();
        let (ni, nj, _) = self.x.shape();
        let (nk, nn) = (self.nmf.n_bases, self.nmf.n_src);
        let (a, b) = self.mm_terms();
        let floor = self.floor;
        let mut num = vec![0.0; nn];
        let mut den = vec![0.0; nn];
        for i in 0..ni {
            for k in 0..nk {
                num.iter_mut().for_each(|v| *v = 0.0);
                den.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..nj {
                    let v_kj = &self.nmf.v[(k * nj + j) * nn..(k * nj + j + 1) * nn];
                    let base = (i * nj + j) * nn;
                    for n in 0..nn {
                        num[n] += v_kj[n] * a[base + n];
                        den[n] += v_kj[n] * b[base + n];
                    }
                }
                let t_ik = &mut self.nmf.t[(i * nk + k) * nn..(i * nk + k + 1) * nn];
                for n in 0..nn {
                    t_ik[n] = (t_ik[n] * (num[n] / den[n].max(floor)).sqrt()).max(floor);
                }
            }
        }
        self.times.mm_update += start.elapsed().as_secs_f64();
        self.refresh_model(true);
    }

    /// Multiplicative update of the activations `v_kjn`, then `η` refresh.
    pub fn update_v(&mut self) {
        let start = Instant::now();
        let (ni, nj, _) = self.x.shape();
        let (nk, nn) = (self.nmf.n_bases, self.nmf.n_src);
        let (a, b) = self.mm_terms();
        let floor = self.floor;
        let mut num = vec![0.0; nj * nn];
        let mut den = vec![0.0; nj * nn];
        for k in 0..nk {
            num.iter_mut().for_each(|v| *v = 0.0);
            den.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..ni {
                let t_ik = &self.nmf.t[(i * nk + k) * nn..(i * nk + k + 1) * nn];
                for j in 0..nj {
                    let base = (i * nj + j) * nn;
                    for n in 0..nn {
                        num[j * nn + n] += t_ik[n] * a[base + n];
                        den[j * nn + n] += t_ik[n] * b[base + n];
                    }
                }
            }
            let v_k = &mut self.nmf.v[k * nj * nn..(k + 1) * nj * nn];
            for q in 0..nj * nn {
                v_k[q] = (v_k[q] * (num[q] / den[q].max(floor)).sqrt()).max(floor);
            }
        }
        self.times.mm_update += start.elapsed().as_secs_f64();
        self.refresh_model(true);
    }

    /// Multiplicative update of every `[Λ_in]_mm`, then `η` refresh.
    pub fn update_lambda(&mut self) {
        let start = Instant::now();
        let (ni, nj, nm) = self.x.shape();
        let nn = self.nmf.n_src;
        let floor = self.floor;
        let mut num = vec![0.0; nn * nm];
        let mut den = vec![0.0; nn * nm];
        let mut r1 = vec![0.0; nm];
        let mut r2 = vec![0.0; nm];
        for i in 0..ni {
            num.iter_mut().for_each(|v| *v = 0.0);
            den.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..nj {
                let base = (i * nj + j) * nm;
                for m in 0..nm {
                    let inv = 1.0 / self.eta[base + m];
                    r2[m] = inv;
                    r1[m] = self.pow_y[base + m] * inv * inv;
                }
                let h_ij = &self.h[(i * nj + j) * nn..(i * nj + j + 1) * nn];
                for n in 0..nn {
                    let h = h_ij[n];
                    for m in 0..nm {
                        num[n * nm + m] += h * r1[m];
                        den[n * nm + m] += h * r2[m];
                    }
                }
            }
            let lam = &mut self.spatial.lambda[i * nn * nm..(i + 1) * nn * nm];
            for q in 0..nn * nm {
                lam[q] = (lam[q] * (num[q] / den[q].max(floor)).sqrt()).max(floor);
            }
        }
        self.times.mm_update += start.elapsed().as_secs_f64();
        self.refresh_model(false);
    }

    /// One full sweep: IP over all columns, then `t`, `v`, `Λ`.
    pub fn sweep(&mut self) {
        self.ip_sweep();
        self.update_t();
        self.update_v();
        self.update_lambda();
    }
}

/// Pairwise (tree) reduction of `Σ_j w_j outer_j` over `j in lo..hi`.
fn pairwise_weighted_sum(
    outer: &[C64],
    weights: &[f64],
    p: usize,
    lo: usize,
    hi: usize,
    out: &mut [C64],
    scratch: &mut [C64],
) {
    if hi - lo <= PAIRWISE_LEAF {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for j in lo..hi {
            let wj = weights[j];
            for (o, &x) in out.iter_mut().zip(&outer[j * p..(j + 1) * p]) {
                *o += x * wj;
            }
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_weighted_sum(outer, weights, p, lo, mid, out, scratch);
    let (tmp, rest) = scratch.split_at_mut(p);
    pairwise_weighted_sum(outer, weights, p, mid, hi, tmp, rest);
    for (o, t) in out.iter_mut().zip(tmp.iter()) {
        *o += t;
    }
}

/// Runs `opts.iters` sweeps over a set of estimators that together form one
/// model (one estimator, or one per subarray in independent mode).
pub(crate) fn run_fit(
    estimators: &mut [Estimator<'_>],
    opts: &FitOptions,
    assemble: &dyn Fn(&[Estimator<'_>]) -> Result<BlockModel>,
    mut observer: Option<&mut dyn FitObserver>,
) -> Result<FitReport> {
    let total_cost = |ests: &[Estimator<'_>]| -> Result<f64> {
        ests.iter().map(|e| e.cost()).sum::<Result<f64>>()
    };
    let mut report = FitReport { cost_trace: vec![total_cost(estimators)?], ..Default::default() };
    let before: Vec<StageTimes> = estimators.iter().map(|e| e.stage_times()).collect();
    let mut elapsed = 0.0;
    if let Some(obs) = observer.as_deref_mut() {
        if obs.wants(0) {
            let model = assemble(estimators)?;
            obs.observe(&FitSnapshot { iteration: 0, cost: report.cost_trace[0], elapsed_seconds: 0.0, model: &model })?;
        }
    }
    for it in 1..=opts.iters {
        let start = Instant::now();
        for est in estimators.iter_mut() {
            est.sweep();
        }
        let secs = start.elapsed().as_secs_f64();
        elapsed += secs;
        report.iter_seconds.push(secs);
        let cost = total_cost(estimators)?;
        report.cost_trace.push(cost);
        report.iterations = it;
        if let Some(obs) = observer.as_deref_mut() {
            if obs.wants(it) {
                let model = assemble(estimators)?;
                obs.observe(&FitSnapshot { iteration: it, cost, elapsed_seconds: elapsed, model: &model })?;
            }
        }
    }
    for (est, b) in estimators.iter().zip(before) {
        let mut t = est.stage_times();
        t.w_update -= b.w_update;
        t.mm_update -= b.mm_update;
        t.eta -= b.eta;
        t.decorrelate -= b.decorrelate;
        report.stages.add(&t);
    }
    Ok(report)
}

fn assemble_shared(ests: &[Estimator<'_>]) -> Result<BlockModel> {
    Ok(BlockModel::shared(ests[0].nmf().clone(), ests[0].spatial().clone()))
}

/// Fits a shared-spectrogram model over `init.spatial.layout` (one block is
/// the conventional full-array estimator).
pub fn fit_shared(
    x: &ObsTensor,
    init: BlockModel,
    opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<Fit> {
    init.validate()?;
    if init.mode != ShareMode::Shared {
        return Err(Error::InvalidConfig("fit_shared needs a shared-spectrogram model".into()));
    }
    let BlockModel { nmf, spatial, .. } = init;
    let nmf = nmf.into_iter().next().expect("validated shared model has one NMF");
    let mut ests = [Estimator::new(x, nmf, spatial, opts.floor)?];
    let report = run_fit(&mut ests, opts, &assemble_shared, observer)?;
    let [est] = ests;
    let (nmf, spatial) = est.into_parts();
    Ok(Fit { model: BlockModel::shared(nmf, spatial), report })
}

/// Conventional FastMNMF on all channels of `x`.
pub fn fit_full(
    x: &ObsTensor,
    init: BlockModel,
    opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<Fit> {
    if init.spatial.n_blocks() != 1 {
        return Err(Error::InvalidConfig("fit_full needs a one-block spatial model".into()));
    }
    fit_shared(x, init, opts, observer)
}

/// `y_ij = W_i^H x_ij` with `W_i` assembled from its blocks.
pub fn decorrelate(x: &ObsTensor, spatial: &SpatialModel) -> Result<ObsTensor> {
    let (ni, nj, nm) = x.shape();
    if spatial.n_freq != ni || spatial.n_chan() != nm {
        return Err(Error::ShapeMismatch("demixers do not match observations".into()));
    }
    let mut y = ObsTensor::zeros(ni, nj, nm);
    for i in 0..ni {
        for j in 0..nj {
            for l in 0..spatial.n_blocks() {
                let r = spatial.layout.range(l);
                let xs = x.frame(i, j)[r.clone()].to_vec();
                demix_into(spatial.w_block(i, l), &xs, &mut y.frame_mut(i, j)[r]);
            }
        }
    }
    Ok(y)
}

/// `η_ijm = max(Σ_n h_ijn [Λ_in]_mm, floor)`, laid out `(i, j, m)`.
pub fn compute_eta(nmf: &NmfModel, spatial: &SpatialModel, floor: f64) -> Vec<f64> {
    let h = nmf.spectrogram();
    let (ni, nj, nn, nm) = (nmf.n_freq, nmf.n_frames, nmf.n_src, spatial.n_chan());
    let mut eta = vec![0.0; ni * nj * nm];
    for i in 0..ni {
        for j in 0..nj {
            for m in 0..nm {
                let s: f64 = (0..nn).map(|n| h[(i * nj + j) * nn + n] * spatial.lambda(i, n, m)).sum();
                eta[(i * nj + j) * nm + m] = s.max(floor);
            }
        }
    }
    eta
}

/// Cost evaluated directly on the dense (assembled) demixers:
/// `Σ (|y|^2 / η + ln η) - J Σ_i ln |det W_i|^2`.
pub fn cost_full(x: &ObsTensor, nmf: &NmfModel, spatial: &SpatialModel, floor: f64) -> Result<f64> {
    let (ni, nj, nm) = x.shape();
    let h = nmf.spectrogram();
    let nn = nmf.n_src;
    let mut total = 0.0;
    for i in 0..ni {
        let w = spatial.assembled_w(i);
        let lu = Lu::factor(&w).map_err(|_| Error::SingularDemixer { bin: i })?;
        let mut acc = 0.0;
        for j in 0..nj {
            let y = w.adjoint_matvec(x.frame(i, j));
            for m in 0..nm {
                let raw: f64 = (0..nn).map(|n| h[(i * nj + j) * nn + n] * spatial.lambda(i, n, m)).sum();
                acc += y[m].norm_sqr() / raw.max(floor) + raw.max(LOG_CLAMP).ln();
            }
        }
        total += acc - nj as f64 * lu.ln_abs_det_sq();
    }
    Ok(total)
}

/// IP update of column `m` of every `W_i` of a one-block model.
pub fn ip_update_w(
    x: &ObsTensor,
    nmf: &NmfModel,
    spatial: &mut SpatialModel,
    m: usize,
    floor: f64,
) -> Result<()> {
    let mut est = Estimator::new(x, nmf.clone(), spatial.clone(), floor)?;
    let (l, mu) = spatial.layout.locate(m)?;
    est.ip_update(l, mu);
    *spatial = est.into_parts().1;
    Ok(())
}

fn mm_step(
    x: &ObsTensor,
    nmf: &mut NmfModel,
    spatial: &mut SpatialModel,
    floor: f64,
    step: impl FnOnce(&mut Estimator<'_>),
) -> Result<()> {
    let mut est = Estimator::new(x, nmf.clone(), spatial.clone(), floor)?;
    step(&mut est);
    (*nmf, *spatial) = est.into_parts();
    Ok(())
}

pub fn mm_update_t(x: &ObsTensor, nmf: &mut NmfModel, spatial: &mut SpatialModel, floor: f64) -> Result<()> {
    mm_step(x, nmf, spatial, floor, |e: &mut Estimator<'_>| e.update_t())
}

pub fn mm_update_v(x: &ObsTensor, nmf: &mut NmfModel, spatial: &mut SpatialModel, floor: f64) -> Result<()> {
    mm_step(x, nmf, spatial, floor, |e: &mut Estimator<'_>| e.update_v())
}

pub fn mm_update_lambda(
    x: &ObsTensor,
    nmf: &mut NmfModel,
    spatial: &mut SpatialModel,
    floor: f64,
) -> Result<()> {
    mm_step(x, nmf, spatial, floor, |e: &mut Estimator<'_>| e.update_lambda())
}
