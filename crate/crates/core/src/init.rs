//! Initialization: clustering-based soft masks with permutation alignment,
//! soft-masked source images, initial spectrograms, Itakura-Saito NMF warm
//! start, and GEVD demixers with diagonal `Λ`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{best_assignment, best_assignment_exhaustive};
use crate::hermlin::{cholesky, ddiag, gevd_joint_diag, BlockLayout, CMat, Lu, C64};
use crate::model::{BlockModel, NmfModel, ShareMode, SpatialModel, FLOOR};
use crate::seed;
use crate::stft::ObsTensor;

/// Relative diagonal loading of sample SCMs before inversion.
pub const SCM_LOADING: f64 = 1e-6;
/// Largest source count accepted by the subarray alignment search.
pub const MAX_ALIGN_SOURCES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub n_src: usize,
    pub n_bases: usize,
    pub seed: u64,
    /// Softmax temperature of the soft cluster assignment.
    pub tau: f64,
    pub kmeans_iters: usize,
    pub nmf_max_iter: usize,
    /// Relative improvement below which IS-NMF stops (checked every 10
    /// iterations; zero disables the check).
    pub nmf_tol: f64,
    pub align_rounds: usize,
    pub align_radius: usize,
}

impl InitOptions {
    pub fn new(n_src: usize, n_bases: usize, seed: u64) -> Self {
        Self {
            n_src,
            n_bases,
            seed,
            tau: 1.0,
            kmeans_iters: 50,
            nmf_max_iter: 1000,
            nmf_tol: 1e-4,
            align_rounds: 10,
            align_radius: 3,
        }
    }
}

/// Soft time-frequency masks laid out as `(i, j, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub n_freq: usize,
    pub n_frames: usize,
    pub n_src: usize,
    pub values: Vec<f64>,
}

impl SoftMask {
    pub fn uniform(n_freq: usize, n_frames: usize, n_src: usize) -> Self {
        Self { n_freq, n_frames, n_src, values: vec![1.0 / n_src as f64; n_freq * n_frames * n_src] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, n: usize) -> f64 {
        self.values[(i * self.n_frames + j) * self.n_src + n]
    }

    pub fn bin(&self, i: usize) -> &[f64] {
        let s = self.n_frames * self.n_src;
        &self.values[i * s..(i + 1) * s]
    }

    fn bin_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.n_frames * self.n_src;
        &mut self.values[i * s..(i + 1) * s]
    }

    /// Relabels every bin: new source `n` is old source `perm[n]`.
    pub fn permuted(&self, perm: &[usize]) -> SoftMask {
        let mut out = self.clone();
        for (new, old) in out.values.chunks_mut(self.n_src).zip(self.values.chunks(self.n_src)) {
            for (n, &p) in perm.iter().enumerate() {
                new[n] = old[p];
            }
        }
        out
    }

    pub fn max_row_error(&self) -> f64 {
        self.values.chunks(self.n_src).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn permute_rows(bin: &mut [f64], nn: usize, perm: &[usize]) {
    let mut tmp = vec![0.0; nn];
    for row in bin.chunks_mut(nn) {
        tmp.copy_from_slice(row);
        for (n, &p) in perm.iter().enumerate() {
            row[n] = tmp[p];
        }
    }
}

/// Pearson correlation; zero when either sequence is constant.
pub fn pearson(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (x, y) in a.clone().zip(b.clone()) {
        n += 1.0;
        sa += x;
        sb += y;
    }
    if n == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn column(bin: &[f64], nn: usize, n: usize) -> impl Iterator<Item = f64> + Clone + '_ {
    bin.iter().skip(n).step_by(nn).copied()
}

fn sq_dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Soft k-means on one frequency bin; returns a `J x N` row-major mask.
///
/// Observation vectors are scaled to unit norm and rotated so that the first
/// channel is real and nonnegative, which removes the per-frame phase.
/// Centroids are power-weighted means projected back to the unit sphere.
pub fn cluster_bin(x: &ObsTensor, i: usize, nn: usize, tau: f64, iters: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (_, nj, nm) = x.shape();
    let uniform = vec![1.0 / nn as f64; nj * nn];
    if nn == 1 {
        return uniform;
    }
    let mut feats: Vec<Vec<C64>> = Vec::with_capacity(nj);
    let mut weights = Vec::with_capacity(nj);
    for j in 0..nj {
        let f = x.frame(i, j);
        let norm = f.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            feats.push(Vec::new());
            weights.push(0.0);
            continue;
        }
        let phase = if f[0].norm() > 0.0 { f[0].conj() / f[0].norm() } else { C64::new(1.0, 0.0) };
        feats.push(f.iter().map(|v| v * phase / norm).collect());
        weights.push(norm * norm);
    }
    let valid: Vec<usize> = (0..nj).filter(|&j| weights[j] > 0.0).collect();
    let mut distinct: Vec<&Vec<C64>> = Vec::new();
    for &j in &valid {
        if distinct.iter().all(|d| sq_dist(d, &feats[j]) > 1e-20) {
            distinct.push(&feats[j]);
            if distinct.len() >= nn {
                break;
            }
        }
    }
    if distinct.len() < nn {
        return uniform;
    }
    // k-means++ seeding
    let mut cents: Vec<Vec<C64>> = vec![feats[valid[rng.gen_range(0..valid.len())]].clone()];
    while cents.len() < nn {
        let d: Vec<f64> =
            valid.iter().map(|&j| cents.iter().map(|c| sq_dist(c, &feats[j])).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut k = 0;
            while k + 1 < d.len() && u >= d[k] {
                u -= d[k];
                k += 1;
            }
            k
        } else {
            rng.gen_range(0..valid.len())
        };
        cents.push(feats[valid[pick]].clone());
    }
    let mut labels = vec![usize::MAX; nj];
    for _ in 0..iters {
        let mut changed = false;
        for &j in &valid {
            let best = (0..nn)
                .min_by(|&a, &b| sq_dist(&cents[a], &feats[j]).total_cmp(&sq_dist(&cents[b], &feats[j])))
                .expect("n >= 1");
            if labels[j] != best {
                labels[j] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, cent) in cents.iter_mut().enumerate() {
            let mut acc = vec![C64::new(0.0, 0.0); nm];
            let mut any = false;
            for &j in valid.iter().filter(|&&j| labels[j] == c) {
                any = true;
                for (a, v) in acc.iter_mut().zip(&feats[j]) {
                    *a += v * weights[j];
                }
            }
            let norm = acc.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if any && norm > 0.0 {
                *cent = acc.into_iter().map(|v| v / norm).collect();
            }
        }
    }
    let mut mask = uniform;
    for &j in &valid {
        let d: Vec<f64> = cents.iter().map(|c| -sq_dist(c, &feats[j]) / tau).collect();
        let top = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = d.iter().map(|v| (v - top).exp()).collect();
        let s: f64 = e.iter().sum();
        for n in 0..nn {
            mask[j * nn + n] = e[n] / s;
        }
    }
    mask
}

fn bin_assignment(target: &[Vec<f64>], bin: &[f64], nn: usize) -> Vec<usize> {
    // target[n] is a reference sequence for source n
    let score: Vec<Vec<f64>> = (0..nn)
        .map(|n| (0..nn).map(|c| pearson(target[n].iter().copied(), column(bin, nn, c))).collect())
        .collect();
    best_assignment(&score)
}

/// Aligns per-bin source labels. A local pass matches each bin to its
/// already aligned lower neighbours within `radius`, then global rounds
/// match every bin to per-source centroid sequences until no bin changes.
/// Returns the aligned mask and the permutation applied to each bin.
pub fn align_frequency_permutations(
    per_bin: Vec<Vec<f64>>,
    n_frames: usize,
    n_src: usize,
    radius: usize,
    rounds: usize,
) -> (SoftMask, Vec<Vec<usize>>) {
    let ni = per_bin.len();
    let nn = n_src;
    let mut mask = SoftMask { n_freq: ni, n_frames, n_src: nn, values: per_bin.into_iter().flatten().collect() };
    let mut total: Vec<Vec<usize>> = vec![(0..nn).collect(); ni];
    if nn == 1 || ni == 0 {
        return (mask, total);
    }
    let compose = |total: &mut Vec<usize>, perm: &[usize]| {
        let old = total.clone();
        for (n, &p) in perm.iter().enumerate() {
            total[n] = old[p];
        }
    };
    for i in 1..ni {
        let lo = i.saturating_sub(radius);
        let mut score = vec![vec![0.0; nn]; nn];
        for k in lo..i {
            for (n, row) in score.iter_mut().enumerate() {
                for (c, s) in row.iter_mut().enumerate() {
                    *s += pearson(column(mask.bin(k), nn, n), column(mask.bin(i), nn, c));
                }
            }
        }
        let perm = best_assignment(&score);
        permute_rows(mask.bin_mut(i), nn, &perm);
        compose(&mut total[i], &perm);
    }
    for _ in 0..rounds {
        let mut cent = vec![vec![0.0; n_frames]; nn];
        for i in 0..ni {
            for (j, row) in mask.bin(i).chunks(nn).enumerate() {
                for n in 0..nn {
                    cent[n][j] += row[n] / ni as f64;
                }
            }
        }
        let mut changed = false;
        for i in 0..ni {
            let perm = bin_assignment(&cent, mask.bin(i), nn);
            if perm.iter().enumerate().any(|(n, &p)| n != p) {
                changed = true;
                permute_rows(mask.bin_mut(i), nn, &perm);
                compose(&mut total[i], &perm);
            }
        }
        if !changed {
            break;
        }
    }
    (mask, total)
}

/// Soft masks from per-bin clustering followed by frequency alignment.
pub fn cluster_masks(x: &ObsTensor, opts: &InitOptions) -> Result<SoftMask> {
    if opts.n_src == 0 || opts.tau <= 0.0 {
        return Err(Error::InvalidConfig("need at least one source and a positive temperature".into()));
    }
    let (ni, nj, _) = x.shape();
    if nj < opts.n_src {
        return Err(Error::InvalidConfig(format!("{nj} frames cannot hold {} clusters", opts.n_src)));
    }
    let per_bin = (0..ni)
        .map(|i| {
            let mut rng = seed::rng(opts.seed, "kmeans", i as u64);
            cluster_bin(x, i, opts.n_src, opts.tau, opts.kmeans_iters, &mut rng)
        })
        .collect();
    Ok(align_frequency_permutations(per_bin, nj, opts.n_src, opts.align_radius, opts.rounds()).0)
}

impl InitOptions {
    fn rounds(&self) -> usize {
        self.align_rounds
    }
}

/// Per-subarray source permutations relative to the first subarray; the
/// aligned masks are `masks[l].permuted(&perms[l])`.
pub fn align_subarray_permutations(masks: &[SoftMask]) -> Result<Vec<Vec<usize>>> {
    let Some(first) = masks.first() else {
        return Ok(Vec::new());
    };
    let nn = first.n_src;
    if nn > MAX_ALIGN_SOURCES {
        return Err(Error::FactorialBlowup { n: nn, limit: MAX_ALIGN_SOURCES });
    }
    if masks.iter().any(|m| (m.n_freq, m.n_frames, m.n_src) != (first.n_freq, first.n_frames, nn)) {
        return Err(Error::ShapeMismatch("subarray masks differ in shape".into()));
    }
    let col = |m: &SoftMask, n: usize| m.values.iter().skip(n).step_by(nn).copied().collect::<Vec<f64>>();
    let ref_cols: Vec<Vec<f64>> = (0..nn).map(|n| col(first, n)).collect();
    let mut out = vec![(0..nn).collect::<Vec<_>>()];
    for m in &masks[1..] {
        let cols: Vec<Vec<f64>> = (0..nn).map(|n| col(m, n)).collect();
        let score: Vec<Vec<f64>> = (0..nn)
            .map(|n| (0..nn).map(|c| pearson(ref_cols[n].iter().copied(), cols[c].iter().copied())).collect())
            .collect();
        out.push(best_assignment_exhaustive(&score));
    }
    Ok(out)
}

/// `c_ijn = mask_ijn x_ij`.
pub fn soft_mask_images(x: &ObsTensor, mask: &SoftMask) -> Result<Vec<ObsTensor>> {
    let (ni, nj, nm) = x.shape();
    if (mask.n_freq, mask.n_frames) != (ni, nj) {
        return Err(Error::ShapeMismatch("mask and observations differ in shape".into()));
    }
    Ok((0..mask.n_src)
        .map(|n| ObsTensor::from_fn(ni, nj, nm, |i, j, m| x.get(i, j, m) * mask.get(i, j, n)))
        .collect())
}

/// Sample SCMs `Σ_j c c^H / J`, indexed `i * N + n`.
pub fn sample_scms(images: &[ObsTensor]) -> Vec<CMat> {
    let (ni, nj, nm) = images[0].shape();
    let nn = images.len();
    let mut out = Vec::with_capacity(ni * nn);
    for i in 0..ni {
        for img in images {
            let mut r = CMat::zeros(nm, nm);
            for j in 0..nj {
                let c = img.frame(i, j);
                for a in 0..nm {
                    for b in a..nm {
                        r[(a, b)] += c[a] * c[b].conj();
                    }
                }
            }
            for a in 0..nm {
                for b in a..nm {
                    let v = r[(a, b)] / nj as f64;
                    r[(a, b)] = v;
                    r[(b, a)] = v.conj();
                }
                r[(a, a)].im = 0.0;
            }
            out.push(r);
        }
    }
    let _ = nn;
    out
}

/// `R + SCM_LOADING * (tr R / M) * I`.
pub fn regularize(r: &CMat) -> CMat {
    let m = r.dim();
    let load = SCM_LOADING * (r.trace().re / m as f64).max(1e-30);
    let mut out = r.clone();
    for k in 0..m {
        out[(k, k)] += load;
    }
    out
}

/// `h_ijn = c^H R_in^{-1} c / M` with loaded `R`, laid out `(i, j, n)`.
pub fn init_spectrogram(images: &[ObsTensor], scms: &[CMat]) -> Result<Vec<f64>> {
    let (ni, nj, nm) = images[0].shape();
    let nn = images.len();
    let mut h = vec![0.0; ni * nj * nn];
    for i in 0..ni {
        for (n, img) in images.iter().enumerate() {
            let inv = Lu::factor(&regularize(&scms[i * nn + n]))?.inverse();
            for j in 0..nj {
                let c = img.frame(i, j);
                let z = inv.matvec(c);
                let q: f64 = c.iter().zip(&z).map(|(a, b)| (a.conj() * b).re).sum();
                h[(i * nj + j) * nn + n] = (q / nm as f64).max(0.0);
            }
        }
    }
    Ok(h)
}

/// Itakura-Saito divergence `Σ x/y - ln(x/y) - 1`.
pub fn is_divergence(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a / b - (a / b).ln() - 1.0).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsNmf {
    /// `I x K`, row-major.
    pub t: Vec<f64>,
    /// `K x J`, row-major.
    pub v: Vec<f64>,
    /// Divergence after every iteration, starting with the initial value.
    pub divergence: Vec<f64>,
}

fn product(t: &[f64], v: &[f64], ni: usize, nj: usize, nk: usize) -> Vec<f64> {
    let mut y = vec![0.0; ni * nj];
    for i in 0..ni {
        let row = &mut y[i * nj..(i + 1) * nj];
        for k in 0..nk {
            let tik = t[i * nk + k];
            for (o, &vv) in row.iter_mut().zip(&v[k * nj..(k + 1) * nj]) {
                *o += tik * vv;
            }
        }
    }
    y
}

/// Multiplicative-update IS-NMF of an `I x J` matrix with exponent 1/2,
/// random positive start scaled to the data mean.
pub fn is_nmf(
    x: &[f64],
    ni: usize,
    nj: usize,
    nk: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<IsNmf> {
    if x.len() != ni * nj || nk == 0 {
        return Err(Error::ShapeMismatch(format!("IS-NMF of {} values as {ni}x{nj}, K={nk}", x.len())));
    }
    let x: Vec<f64> = x.iter().map(|&v| v.max(FLOOR)).collect();
    let avg = (x.iter().sum::<f64>() / x.len() as f64 / nk as f64).sqrt();
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| (avg * f64::abs(StandardNormal.sample(rng))).max(1e-12 * avg)).collect()
    };
    let mut v = draw(nk * nj);
    let mut t = draw(ni * nk);
    let mut y = product(&t, &v, ni, nj, nk);
    let mut divergence = vec![is_divergence(&x, &y)];
    let err0 = (2.0 * divergence[0]).sqrt();
    let mut prev = err0;
    let mut num = vec![0.0; nk];
    let mut den = vec![0.0; nk];
    for it in 1..=max_iter {
        for i in 0..ni {
            num.iter_mut().for_each(|a| *a = 0.0);
            den.iter_mut().for_each(|a| *a = 0.0);
            for j in 0..nj {
                let yy = y[i * nj + j];
                let a = x[i * nj + j] / (yy * yy);
                let b = 1.0 / yy;
                for k in 0..nk {
                    let vk = v[k * nj + j];
                    num[k] += a * vk;
                    den[k] += b * vk;
                }
            }
            for k in 0..nk {
                t[i * nk + k] *= (num[k] / den[k]).sqrt();
            }
        }
        y = product(&t, &v, ni, nj, nk);
        let mut numv = vec![0.0; nk * nj];
        let mut denv = vec![0.0; nk * nj];
        for i in 0..ni {
            for j in 0..nj {
                let yy = y[i * nj + j];
                let a = x[i * nj + j] / (yy * yy);
                let b = 1.0 / yy;
                for k in 0..nk {
                    let tik = t[i * nk + k];
                    numv[k * nj + j] += a * tik;
                    denv[k * nj + j] += b * tik;
                }
            }
        }
        for (vk, (a, b)) in v.iter_mut().zip(numv.iter().zip(&denv)) {
            *vk *= (a / b).sqrt();
        }
        y = product(&t, &v, ni, nj, nk);
        let d = is_divergence(&x, &y);
        divergence.push(d);
        if tol > 0.0 && it % 10 == 0 {
            let err = (2.0 * d.max(0.0)).sqrt();
            if (prev - err) / err0 < tol {
                break;
            }
            prev = err;
        }
    }
    Ok(IsNmf { t, v, divergence })
}

/// IS-NMF per source of an `(i, j, n)` spectrogram, seeded per source.
pub fn nmf_from_spectrogram(h: &[f64], ni: usize, nj: usize, opts: &InitOptions) -> Result<NmfModel> {
    let nn = opts.n_src;
    let nk = opts.n_bases;
    let mut t = vec![0.0; ni * nk * nn];
    let mut v = vec![0.0; nk * nj * nn];
    for n in 0..nn {
        let x: Vec<f64> = (0..ni * nj).map(|ij| h[ij * nn + n]).collect();
        let mut rng = seed::rng(opts.seed, "is_nmf", n as u64);
        let fit = is_nmf(&x, ni, nj, nk, opts.nmf_max_iter, opts.nmf_tol, &mut rng)?;
        for i in 0..ni {
            for k in 0..nk {
                t[(i * nk + k) * nn + n] = fit.t[i * nk + k];
            }
        }
        for k in 0..nk {
            for j in 0..nj {
                v[(k * nj + j) * nn + n] = fit.v[k * nj + j];
            }
        }
    }
    NmfModel::new(ni, nj, nk, nn, t, v)
}

/// Demixers from the GEVD of the last two sources' SCM blocks, and
/// `Λ_n = ddiag(W^H R_n W)` for every source, block by block. `scms` is
/// indexed `i * N + n`. The second matrix of the pencil is loaded only if
/// it is not positive definite.
pub fn init_spatial(scms: &[CMat], n_freq: usize, n_src: usize, layout: &BlockLayout) -> Result<SpatialModel> {
    let nn = n_src;
    if scms.len() != n_freq * nn || scms.iter().any(|r| r.dim() != layout.total()) {
        return Err(Error::ShapeMismatch("SCM family does not match the layout".into()));
    }
    let (ia, ib) = if nn >= 2 { (nn - 2, nn - 1) } else { (0, 0) };
    let mut w = Vec::with_capacity(n_freq * layout.n_blocks());
    let mut lambda = vec![0.0; n_freq * nn * layout.total()];
    for i in 0..n_freq {
        for l in 0..layout.n_blocks() {
            let r = layout.range(l);
            let block = |n: usize| scms[i * nn + n].submatrix(r.clone(), r.clone());
            let mut b = block(ib);
            if cholesky(&b).is_err() {
                b = regularize(&b);
            }
            let (wl, _) = gevd_joint_diag(&block(ia), &b)?;
            for n in 0..nn {
                let d = ddiag(&wl.adjoint_matmul(&block(n)).matmul(&wl));
                for (mu, &v) in d.entries().iter().enumerate() {
                    lambda[(i * nn + n) * layout.total() + r.start + mu] = v.max(FLOOR);
                }
            }
            w.push(wl);
        }
    }
    SpatialModel::new(layout.clone(), n_freq, nn, w, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// One model over all microphones.
    Full,
    /// One model over the first subarray only.
    Single,
    /// Block-diagonal SCMs with shared spectrograms.
    Distributed,
    /// Block-diagonal SCMs with one spectrogram model per subarray.
    Independent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Single => "single",
            Method::Distributed => "distributed",
            Method::Independent => "independent",
        }
    }

    /// Channels the method observes, given the array layout.
    pub fn channels(self, layout: &BlockLayout) -> std::ops::Range<usize> {
        match self {
            Method::Single => layout.range(0),
            _ => 0..layout.total(),
        }
    }

    /// Layout of the fitted model.
    pub fn model_layout(self, layout: &BlockLayout) -> BlockLayout {
        match self {
            Method::Full => BlockLayout::single(layout.total()),
            Method::Single => BlockLayout::single(layout.size(0)),
            Method::Distributed | Method::Independent => layout.clone(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "single" => Ok(Method::Single),
            "distributed" => Ok(Method::Distributed),
            "independent" => Ok(Method::Independent),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Everything the initialization produced. Vectors hold one entry per
/// spectrogram model (one, or one per subarray in independent mode).
#[derive(Clone, Debug, PartialEq)]
pub struct InitBundle {
    pub model: BlockModel,
    pub masks: Vec<SoftMask>,
    pub h0: Vec<Vec<f64>>,
    pub rinit: Vec<Vec<CMat>>,
}

fn stack_images(parts: &[Vec<ObsTensor>], layout: &BlockLayout) -> Vec<ObsTensor> {
    let (ni, nj, _) = parts[0][0].shape();
    (0..parts[0].len())
        .map(|n| {
            ObsTensor::from_fn(ni, nj, layout.total(), |i, j, m| {
                let (l, mu) = layout.locate(m).expect("channel inside layout");
                parts[l][n].get(i, j, mu)
            })
        })
        .collect()
}

/// Runs the pipeline for one method on the full observation `x` with array
/// partition `layout`. The returned model matches `x` restricted to
/// `method.channels(layout)`.
pub fn initialize(x: &ObsTensor, layout: &BlockLayout, method: Method, opts: &InitOptions) -> Result<InitBundle> {
    let (ni, nj, nm) = x.shape();
    if nm != layout.total() {
        return Err(Error::ShapeMismatch(format!("{nm} channels but the partition covers {}", layout.total())));
    }
    match method {
        Method::Full | Method::Single => {
            let xs = x.select_channels(method.channels(layout));
            let mask = cluster_masks(&xs, opts)?;
            let images = soft_mask_images(&xs, &mask)?;
            let scms = sample_scms(&images);
            let h0 = init_spectrogram(&images, &scms)?;
            let nmf = nmf_from_spectrogram(&h0, ni, nj, opts)?;
            let spatial = init_spatial(&scms, ni, opts.n_src, &BlockLayout::single(xs.n_chan()))?;
            Ok(InitBundle { model: BlockModel::shared(nmf, spatial), masks: vec![mask], h0: vec![h0], rinit: vec![scms] })
        }
        Method::Distributed | Method::Independent => {
            let subs: Vec<ObsTensor> = (0..layout.n_blocks()).map(|l| x.select_channels(layout.range(l))).collect();
            let raw: Vec<SoftMask> = subs.iter().map(|s| cluster_masks(s, opts)).collect::<Result<_>>()?;
            let perms = align_subarray_permutations(&raw)?;
            let masks: Vec<SoftMask> = raw.iter().zip(&perms).map(|(m, p)| m.permuted(p)).collect();
            let parts: Vec<Vec<ObsTensor>> =
                subs.iter().zip(&masks).map(|(s, m)| soft_mask_images(s, m)).collect::<Result<_>>()?;
            if method == Method::Distributed {
                let images = stack_images(&parts, layout);
                let scms = sample_scms(&images);
                let h0 = init_spectrogram(&images, &scms)?;
                let nmf = nmf_from_spectrogram(&h0, ni, nj, opts)?;
                let spatial = init_spatial(&scms, ni, opts.n_src, layout)?;
                Ok(InitBundle { model: BlockModel::shared(nmf, spatial), masks, h0: vec![h0], rinit: vec![scms] })
            } else {
                let mut nmf = Vec::new();
                let mut spatial = Vec::new();
                let mut h0s = Vec::new();
                let mut rinit = Vec::new();
                for (l, images) in parts.iter().enumerate() {
                    let scms = sample_scms(images);
                    let h0 = init_spectrogram(images, &scms)?;
                    nmf.push(nmf_from_spectrogram(&h0, ni, nj, opts)?);
                    spatial.push(init_spatial(&scms, ni, opts.n_src, &BlockLayout::single(layout.size(l)))?);
                    h0s.push(h0);
                    rinit.push(scms);
                }
                let model = BlockModel { mode: ShareMode::Independent, nmf, spatial: SpatialModel::concat(&spatial)? };
                model.validate()?;
                Ok(InitBundle { model, masks, h0: h0s, rinit })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastmnmf::test_support::*;
    use crate::hermlin::{blkdiag, test_support as ht};
    use rand::SeedableRng;

    /// Two sources, each active in its own frames, with distinct steering.
    fn alternating(ni: usize, nj: usize, seed: u64) -> (ObsTensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active: Vec<usize> = (0..nj).map(|j| (j / 5) % 2).collect();
        let steer = |i: usize, n: usize| {
            let delay = if n == 0 { 0.3 } else { -0.8 };
            vec![C64::new(1.0, 0.0), C64::from_polar(1.0, -std::f64::consts::PI * delay * (i + 1) as f64 / ni as f64)]
        };
        let s: Vec<C64> = (0..ni * nj).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let x = ObsTensor::from_fn(ni, nj, 2, |i, j, m| steer(i, active[j])[m] * s[i * nj + j]);
        (x, active)
    }

    #[test]
    fn single_source_mask_is_one() {
        let mut rng = ht::rng(1);
        let x = rand_obs(&mut rng, 3, 6, 2);
        let m = cluster_masks(&x, &InitOptions::new(1, 2, 0)).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn silent_bin_is_uniform() {
        let mut rng = ht::rng(2);
        let mut x = rand_obs(&mut rng, 4, 10, 2);
        for j in 0..10 {
            x.frame_mut(2, j).iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        }
        let m = cluster_masks(&x, &InitOptions::new(3, 2, 0)).unwrap();
        assert!(m.bin(2).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(m.max_row_error() < 1e-9);
    }

    #[test]
    fn clusters_are_pure_on_alternating_sources() {
        let (x, active) = alternating(16, 60, 3);
        let opts = InitOptions::new(2, 2, 4);
        let mask = cluster_masks(&x, &opts).unwrap();
        assert!(mask.max_row_error() < 1e-9);
        for i in 0..16 {
            let hits = |perm: [usize; 2]| {
                (0..60).filter(|&j| {
                    let lab = if mask.get(i, j, 0) > mask.get(i, j, 1) { 0 } else { 1 };
                    perm[lab] == active[j]
                })
                .count()
            };
            let purity = hits([0, 1]).max(hits([1, 0])) as f64 / 60.0;
            assert!(purity >= 0.9, "bin {i}: {purity}");
        }
    }

    #[test]
    fn aligned_masks_are_a_fixed_point() {
        let (x, _) = alternating(12, 40, 5);
        let mask = cluster_masks(&x, &InitOptions::new(2, 2, 1)).unwrap();
        let per_bin: Vec<Vec<f64>> = (0..12).map(|i| mask.bin(i).to_vec()).collect();
        let (again, perms) = align_frequency_permutations(per_bin, 40, 2, 3, 10);
        assert_eq!(again, mask);
        assert!(perms.iter().all(|p| p == &vec![0, 1]));
    }

    #[test]
    fn planted_frequency_permutations_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (ni, nj, nn) = (40, 80, 3);
        // sparse activity: one dominant source per frame
        let dom: Vec<usize> = (0..nj).map(|_| rng.gen_range(0..nn)).collect();
        let mut truth: Vec<Vec<f64>> = Vec::new();
        for _ in 0..ni {
            let mut bin = Vec::new();
            for &d in &dom {
                let hi = rng.gen_range(0.7..0.95);
                bin.extend((0..nn).map(|n| if n == d { hi } else { (1.0 - hi) / 2.0 }));
            }
            truth.push(bin);
        }
        let mut planted = Vec::new();
        let mut scrambled = truth.clone();
        for (i, bin) in scrambled.iter_mut().enumerate() {
            let mut p: Vec<usize> = (0..nn).collect();
            if i > 0 {
                for k in (1..nn).rev() {
                    p.swap(k, rng.gen_range(0..=k));
                }
            }
            permute_rows(bin, nn, &p);
            planted.push(p);
        }
        let (aligned, _) = align_frequency_permutations(scrambled, nj, nn, 3, 10);
        let ok = (0..ni).filter(|&i| aligned.bin(i) == truth[i].as_slice()).count();
        assert!(ok as f64 >= 0.95 * ni as f64, "{ok} of {ni}");
    }

    #[test]
    fn two_bin_swap_detected() {
        let a = vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.3];
        let swapped = vec![0.1, 0.9, 0.8, 0.2, 0.3, 0.7];
        let (mask, perms) = align_frequency_permutations(vec![a.clone(), swapped], 3, 2, 3, 10);
        assert_eq!(perms[1], vec![1, 0]);
        assert_eq!(mask.bin(1), a.as_slice());
    }

    fn random_mask(rng: &mut ChaCha8Rng, ni: usize, nj: usize, nn: usize) -> SoftMask {
        let mut values = Vec::new();
        for _ in 0..ni * nj {
            let raw: Vec<f64> = (0..nn).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            values.extend(raw.iter().map(|v| v / s));
        }
        SoftMask { n_freq: ni, n_frames: nj, n_src: nn, values }
    }

    #[test]
    fn subarray_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_mask(&mut rng, 5, 20, 3);
        assert_eq!(align_subarray_permutations(&[m.clone(), m.clone()]).unwrap()[1], vec![0, 1, 2]);
        let swapped = m.permuted(&[1, 0, 2]);
        let perms = align_subarray_permutations(&[m.clone(), swapped.clone()]).unwrap();
        assert_eq!(swapped.permuted(&perms[1]), m);
        let big = random_mask(&mut rng, 1, 4, 9);
        assert!(matches!(align_subarray_permutations(&[big.clone(), big]), Err(Error::FactorialBlowup { .. })));
    }

    #[test]
    fn subarray_alignment_is_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for nn in 2..=5 {
            for _ in 0..5 {
                let a = random_mask(&mut rng, 3, 10, nn);
                let b = random_mask(&mut rng, 3, 10, nn);
                let perm = align_subarray_permutations(&[a.clone(), b.clone()]).unwrap().remove(1);
                let score = |p: &[usize]| -> f64 {
                    let bp = b.permuted(p);
                    (0..nn)
                        .map(|n| pearson(a.values.iter().skip(n).step_by(nn).copied(), bp.values.iter().skip(n).step_by(nn).copied()))
                        .sum()
                };
                // enumerate all permutations independently by Heap's algorithm
                let mut all = Vec::new();
                let mut p: Vec<usize> = (0..nn).collect();
                fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                    if k == 1 {
                        out.push(p.clone());
                        return;
                    }
                    for c in 0..k {
                        heap(k - 1, p, out);
                        if k % 2 == 0 { p.swap(c, k - 1) } else { p.swap(0, k - 1) }
                    }
                }
                heap(nn, &mut p, &mut all);
                let best = all.iter().map(|q| score(q)).fold(f64::NEG_INFINITY, f64::max);
                assert!((score(&perm) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_mask_images_sum_to_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_obs(&mut rng, 3, 7, 2);
        let mask = random_mask(&mut rng, 3, 7, 3);
        let imgs = soft_mask_images(&x, &mask).unwrap();
        for (k, v) in x.as_slice().iter().enumerate() {
            let s: C64 = imgs.iter().map(|img| img.as_slice()[k]).sum();
            assert!((s - v).norm() < 1e-12);
        }
        let uni = soft_mask_images(&x, &SoftMask::uniform(3, 7, 4)).unwrap();
        assert!(uni[2].as_slice().iter().zip(x.as_slice()).all(|(a, b)| (a - b / 4.0).norm() < 1e-15));
        let one = soft_mask_images(&x, &SoftMask::uniform(3, 7, 1)).unwrap();
        assert_eq!(one[0], x);
    }

    #[test]
    fn scalar_spectrogram_is_normalized_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = rand_obs(&mut rng, 2, 9, 1);
        let scms = sample_scms(std::slice::from_ref(&img));
        let h = init_spectrogram(std::slice::from_ref(&img), &scms).unwrap();
        for i in 0..2 {
            let r: f64 = (0..9).map(|j| img.get(i, j, 0).norm_sqr()).sum::<f64>() / 9.0;
            for j in 0..9 {
                let want = img.get(i, j, 0).norm_sqr() / (r * (1.0 + SCM_LOADING));
                assert!((h[i * 9 + j] - want).abs() < 1e-12);
            }
        }
        let constant = ObsTensor::from_fn(1, 5, 1, |_, _, _| C64::new(0.3, -0.4));
        let h = init_spectrogram(std::slice::from_ref(&constant), &sample_scms(std::slice::from_ref(&constant))).unwrap();
        assert!(h.iter().all(|v| (v - 1.0).abs() < 1e-5));
        let zero = ObsTensor::zeros(1, 4, 2);
        let h = init_spectrogram(std::slice::from_ref(&zero), &sample_scms(std::slice::from_ref(&zero))).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn is_nmf_recovers_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(0.5..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..2.0)).collect();
        let x: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| p * q)).collect();
        let fit = is_nmf(&x, 6, 8, 1, 1000, 0.0, &mut rng).unwrap();
        assert!(*fit.divergence.last().unwrap() <= 1e-6);
    }

    #[test]
    fn is_nmf_scalar_converges_to_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fit = is_nmf(&[3.7], 1, 1, 1, 60, 0.0, &mut rng).unwrap();
        assert!((fit.t[0] * fit.v[0] - 3.7).abs() < 1e-9);
    }

    #[test]
    fn is_nmf_divergence_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let x: Vec<f64> = (0..7 * 9).map(|_| rng.gen_range(0.0..3.0)).collect();
            let fit = is_nmf(&x, 7, 9, 3, 200, 0.0, &mut rng).unwrap();
            for w in fit.divergence.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn spatial_init_on_diagonal_pair() {
        let r1 = CMat::from_real_diag(&[2.0, 1.0]);
        let r2 = CMat::identity(2);
        let s = init_spatial(&[r1, r2], 1, 2, &BlockLayout::single(2)).unwrap();
        let w = s.w_block(0, 0);
        for c in 0..2 {
            let norm: f64 = w.column(c).iter().map(|v| v.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!((s.lambda(0, 0, 0) - 2.0).abs() < 1e-12 && (s.lambda(0, 0, 1) - 1.0).abs() < 1e-12);
        assert!((s.lambda(0, 1, 0) - 1.0).abs() < 1e-12 && (s.lambda(0, 1, 1) - 1.0).abs() < 1e-12);
    }

    fn commuting_family(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<CMat> {
        let a = ht::rand_mat(rng, m, m).add(&CMat::identity(m).scale(C64::new(3.0, 0.0)));
        (0..n)
            .map(|_| {
                let d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
                let mut r = a.matmul(&CMat::from_real_diag(&d)).matmul(&a.adjoint());
                r.symmetrize();
                r
            })
            .collect()
    }

    #[test]
    fn spatial_init_diagonalizes_commuting_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let fam = commuting_family(&mut rng, 4, 2);
            let s = init_spatial(&fam, 1, 2, &BlockLayout::single(4)).unwrap();
            let w = s.w_block(0, 0);
            for r in &fam {
                let d = w.adjoint_matmul(r).matmul(w);
                assert!(d.off_diagonal_norm() <= 1e-9 * d.frobenius_norm());
            }
            let e = w.adjoint_matmul(&fam[1]).matmul(w);
            assert!(e.sub(&CMat::identity(4)).max_abs() < 1e-9);
        }
    }

    #[test]
    fn third_source_keeps_positive_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut fam = vec![ht::rand_pd(&mut rng, 3, 0.1)];
        fam.extend(commuting_family(&mut rng, 3, 2));
        let s = init_spatial(&fam, 1, 3, &BlockLayout::single(3)).unwrap();
        let w = s.w_block(0, 0);
        let full = w.adjoint_matmul(&fam[0]).matmul(w);
        assert!(full.off_diagonal_norm() > 1e-6);
        for m in 0..3 {
            assert!((s.lambda(0, 0, m) - full[(m, m)].re).abs() < 1e-12);
            assert!(s.lambda(0, 0, m) > 0.0);
        }
    }

    #[test]
    fn block_init_matches_full_on_block_diagonal_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let layout = BlockLayout::new(vec![2, 3]).unwrap();
        let fam: Vec<CMat> = (0..3)
            .map(|_| blkdiag(&[ht::rand_pd(&mut rng, 2, 0.2), ht::rand_pd(&mut rng, 3, 0.2)]))
            .collect();
        let full = init_spatial(&fam, 1, 3, &BlockLayout::single(5)).unwrap();
        let block = init_spatial(&fam, 1, 3, &layout).unwrap();
        // W^H R_N W = I for both, block by block
        for l in 0..2 {
            let r = layout.range(l);
            let w = block.w_block(0, l);
            let e = w.adjoint_matmul(&fam[2].submatrix(r.clone(), r)).matmul(w);
            assert!(e.sub(&CMat::identity(e.dim())).max_abs() < 1e-9);
        }
        // the full GEVD of a block-diagonal pencil has block-supported columns
        // with the same generalized eigenvalues, so Λ agrees as multisets
        for n in 0..3 {
            let mut a: Vec<f64> = full.lambda_row(0, n).to_vec();
            let mut b: Vec<f64> = block.lambda_row(0, n).to_vec();
            if n == 1 {
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
                }
            }
        }
        let fw = full.w_block(0, 0);
        for c in 0..5 {
            let col = fw.column(c);
            let top: f64 = col[..2].iter().map(|v| v.norm_sqr()).sum();
            let bot: f64 = col[2..].iter().map(|v| v.norm_sqr()).sum();
            assert!(top.min(bot) <= 1e-16 * top.max(bot) + 1e-24);
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layout = BlockLayout::new(vec![2, 2]).unwrap();
        let s = rand_spatial(&mut rng, layout.clone(), 6, 3);
        let nmf = rand_nmf(&mut rng, 6, 30, 2, 3);
        let (x, _) = crate::mixsim::sample_model(&BlockModel::shared(nmf, s), 3).unwrap();
        let opts = InitOptions { nmf_max_iter: 100, ..InitOptions::new(3, 2, 5) };
        for method in [Method::Full, Method::Single, Method::Distributed, Method::Independent] {
            let a = initialize(&x, &layout, method, &opts).unwrap();
            let b = initialize(&x, &layout, method, &opts).unwrap();
            assert_eq!(a, b);
            a.model.validate().unwrap();
            assert!(a.model.is_finite());
            assert_eq!(a.model.spatial.layout, method.model_layout(&layout));
            assert!(a.model.nmf.iter().all(|m| m.t.iter().chain(&m.v).all(|&v| v > 0.0)));
            for mask in &a.masks {
                assert!(mask.max_row_error() < 1e-9);
            }
        }
    }
}
