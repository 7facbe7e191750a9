//! Parameter containers shared by every estimator.
//!
//! Index layouts (row major, last index fastest):
//! `T` is `(i, k, n)`, `V` is `(k, j, n)`, `Λ` is `(i, n, m)` and the
//! demixer blocks are `(i, l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermlin::{blkdiag, BlockLayout, CMat, Lu, C64};

/// Default positivity floor for `η`, MM denominators, IP normalizers and the
/// nonnegative parameters.
pub const FLOOR: f64 = 1e-6;

/// NMF source spectrogram model `h_ijn = Σ_k t_ikn v_kjn`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmfModel {
    pub n_freq: usize,
    pub n_frames: usize,
    pub n_bases: usize,
    pub n_src: usize,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl NmfModel {
    pub fn new(
        n_freq: usize,
        n_frames: usize,
        n_bases: usize,
        n_src: usize,
        t: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let model = Self { n_freq, n_frames, n_bases, n_src, t, v };
        model.validate()?;
        Ok(model)
    }

    pub fn constant(n_freq: usize, n_frames: usize, n_bases: usize, n_src: usize, value: f64) -> Self {
        Self {
            n_freq,
            n_frames,
            n_bases,
            n_src,
            t: vec![value; n_freq * n_bases * n_src],
            v: vec![value; n_bases * n_frames * n_src],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.n_freq * self.n_bases * self.n_src
            || self.v.len() != self.n_bases * self.n_frames * self.n_src
        {
            return Err(Error::ShapeMismatch(format!(
                "NMF factors of length {}/{} for I={} J={} K={} N={}",
                self.t.len(),
                self.v.len(),
                self.n_freq,
                self.n_frames,
                self.n_bases,
                self.n_src
            )));
        }
        if self.t.iter().chain(&self.v).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig("NMF factors must be finite and nonnegative".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn t(&self, i: usize, k: usize, n: usize) -> f64 {
        self.t[(i * self.n_bases + k) * self.n_src + n]
    }

    #[inline]
    pub fn v(&self, k: usize, j: usize, n: usize) -> f64 {
        self.v[(k * self.n_frames + j) * self.n_src + n]
    }

    /// `h_ijn` laid out as `(i, j, n)`.
    pub fn spectrogram(&self) -> Vec<f64> {
        let (nj, nk, nn) = (self.n_frames, self.n_bases, self.n_src);
        let mut h = vec![0.0; self.n_freq * nj * nn];
        for i in 0..self.n_freq {
            let t_i = &self.t[i * nk * nn..(i + 1) * nk * nn];
            for j in 0..nj {
                let h_ij = &mut h[(i * nj + j) * nn..(i * nj + j + 1) * nn];
                for k in 0..nk {
                    let t_ik = &t_i[k * nn..(k + 1) * nn];
                    let v_kj = &self.v[(k * nj + j) * nn..(k * nj + j + 1) * nn];
                    for n in 0..nn {
                        h_ij[n] += t_ik[n] * v_kj[n];
                    }
                }
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Jointly diagonalized spatial model: per-frequency demixers, block
/// diagonal under `layout`, and the diagonals `[Λ_in]_mm`.
///
/// A full-array model is the special case of a one-block layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    pub layout: BlockLayout,
    pub n_freq: usize,
    pub n_src: usize,
    /// `W_i^(l)` at index `i * L + l`.
    pub w: Vec<CMat>,
    pub lambda: Vec<f64>,
}

impl SpatialModel {
    pub fn new(
        layout: BlockLayout,
        n_freq: usize,
        n_src: usize,
        w: Vec<CMat>,
        lambda: Vec<f64>,
    ) -> Result<Self> {
        let model = Self { layout, n_freq, n_src, w, lambda };
        model.validate()?;
        Ok(model)
    }

    /// Identity demixers and unit `Λ`.
    pub fn identity(layout: BlockLayout, n_freq: usize, n_src: usize) -> Self {
        let w = (0..n_freq)
            .flat_map(|_| layout.sizes().iter().map(|&s| CMat::identity(s)).collect::<Vec<_>>())
            .collect();
        let lambda = vec![1.0; n_freq * n_src * layout.total()];
        Self { layout, n_freq, n_src, w, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layout.n_blocks();
        if self.w.len() != self.n_freq * l {
            return Err(Error::ShapeMismatch(format!(
                "{} demixer blocks for {} bins and {l} blocks",
                self.w.len(),
                self.n_freq
            )));
        }
        for (idx, w) in self.w.iter().enumerate() {
            let size = self.layout.size(idx % l);
            if w.rows() != size || w.cols() != size {
                return Err(Error::ShapeMismatch(format!(
                    "demixer block {} is {}x{}, expected {size}x{size}",
                    idx % l,
                    w.rows(),
                    w.cols()
                )));
            }
        }
        if self.lambda.len() != self.n_freq * self.n_src * self.n_chan() {
            return Err(Error::ShapeMismatch(format!("Λ has {} entries", self.lambda.len())));
        }
        if self.lambda.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig("Λ must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_chan(&self) -> usize {
        self.layout.total()
    }

    pub fn n_blocks(&self) -> usize {
        self.layout.n_blocks()
    }

    #[inline]
    pub fn w_block(&self, i: usize, l: usize) -> &CMat {
        &self.w[i * self.layout.n_blocks() + l]
    }

    #[inline]
    pub fn w_block_mut(&mut self, i: usize, l: usize) -> &mut CMat {
        let nl = self.layout.n_blocks();
        &mut self.w[i * nl + l]
    }

    /// Dense `W_i` with exact zeros outside the blocks.
    pub fn assembled_w(&self, i: usize) -> CMat {
        let nl = self.layout.n_blocks();
        blkdiag(&self.w[i * nl..(i + 1) * nl])
    }

    #[inline]
    pub fn lambda(&self, i: usize, n: usize, m: usize) -> f64 {
        self.lambda[(i * self.n_src + n) * self.n_chan() + m]
    }

    /// `[Λ_in]_mm` for every `m`.
    #[inline]
    pub fn lambda_row(&self, i: usize, n: usize) -> &[f64] {
        let nm = self.n_chan();
        &self.lambda[(i * self.n_src + n) * nm..(i * self.n_src + n + 1) * nm]
    }

    /// `R_in = W_i^{-H} Λ_in W_i^{-1}`.
    pub fn scm(&self, i: usize, n: usize) -> Result<CMat> {
        let w = self.assembled_w(i);
        let w_inv = Lu::factor(&w).map_err(|_| Error::SingularDemixer { bin: i })?.inverse();
        let lam = CMat::from_real_diag(self.lambda_row(i, n));
        Ok(w_inv.adjoint().matmul(&lam).matmul(&w_inv))
    }

    /// Block `l` as a standalone one-block model.
    pub fn restrict(&self, l: usize) -> SpatialModel {
        let range = self.layout.range(l);
        let size = range.len();
        let w = (0..self.n_freq).map(|i| self.w_block(i, l).clone()).collect();
        let mut lambda = Vec::with_capacity(self.n_freq * self.n_src * size);
        for i in 0..self.n_freq {
            for n in 0..self.n_src {
                lambda.extend_from_slice(&self.lambda_row(i, n)[range.clone()]);
            }
        }
        SpatialModel { layout: BlockLayout::single(size), n_freq: self.n_freq, n_src: self.n_src, w, lambda }
    }

    /// Inverse of [`SpatialModel::restrict`]: stacks one-block models.
    pub fn concat(parts: &[SpatialModel]) -> Result<SpatialModel> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch("no blocks".into()))?;
        let (n_freq, n_src) = (first.n_freq, first.n_src);
        if parts.iter().any(|p| p.n_freq != n_freq || p.n_src != n_src || p.n_blocks() != 1) {
            return Err(Error::ShapeMismatch("blocks disagree in shape".into()));
        }
        let layout = BlockLayout::new(parts.iter().map(|p| p.n_chan()).collect())?;
        let mut w = Vec::with_capacity(n_freq * parts.len());
        let mut lambda = Vec::with_capacity(n_freq * n_src * layout.total());
        for i in 0..n_freq {
            for p in parts {
                w.push(p.w_block(i, 0).clone());
            }
            for n in 0..n_src {
                for p in parts {
                    lambda.extend_from_slice(p.lambda_row(i, n));
                }
            }
        }
        Ok(SpatialModel { layout, n_freq, n_src, w, lambda })
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().all(|x| x.is_finite())
            && self.w.iter().all(|w| w.as_slice().iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// Whether subarrays share one spectrogram model or each keep their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    Shared,
    Independent,
}

/// Complete model: one NMF per subarray in independent mode, otherwise one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub mode: ShareMode,
    pub nmf: Vec<NmfModel>,
    pub spatial: SpatialModel,
}

impl BlockModel {
    pub fn shared(nmf: NmfModel, spatial: SpatialModel) -> Self {
        Self { mode: ShareMode::Shared, nmf: vec![nmf], spatial }
    }

    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        let expected = match self.mode {
            ShareMode::Shared => 1,
            ShareMode::Independent => self.spatial.n_blocks(),
        };
        if self.nmf.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} NMF models, expected {expected}",
                self.nmf.len()
            )));
        }
        for nmf in &self.nmf {
            nmf.validate()?;
            if nmf.n_freq != self.spatial.n_freq || nmf.n_src != self.spatial.n_src {
                return Err(Error::ShapeMismatch("NMF and spatial model disagree".into()));
            }
        }
        Ok(())
    }

    /// NMF model driving subarray `l`.
    pub fn nmf_for_block(&self, l: usize) -> &NmfModel {
        match self.mode {
            ShareMode::Shared => &self.nmf[0],
            ShareMode::Independent => &self.nmf[l],
        }
    }

    pub fn n_src(&self) -> usize {
        self.spatial.n_src
    }

    pub fn is_finite(&self) -> bool {
        self.spatial.is_finite() && self.nmf.iter().all(NmfModel::is_finite)
    }
}

/// `y_ij^(l) = W_i^(l)H x_ij^(l)` for one observation vector.
#[inline]
pub(crate) fn demix_into(w: &CMat, x: &[C64], y: &mut [C64]) {
    let m = w.rows();
    for (mu, out) in y.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..m {
            acc += w[(a, mu)].conj() * x[a];
        }
        *out = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrogram_matches_naive_sum() {
        let t: Vec<f64> = (0..2 * 3 * 2).map(|x| 0.1 + x as f64).collect();
        let v: Vec<f64> = (0..3 * 4 * 2).map(|x| 0.2 + 0.5 * x as f64).collect();
        let nmf = NmfModel::new(2, 4, 3, 2, t, v).unwrap();
        let h = nmf.spectrogram();
        for i in 0..2 {
            for j in 0..4 {
                for n in 0..2 {
                    let expected: f64 = (0..3).map(|k| nmf.t(i, k, n) * nmf.v(k, j, n)).sum();
                    assert!((h[(i * 4 + j) * 2 + n] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn restrict_concat_round_trip() {
        let layout = BlockLayout::new(vec![2, 3]).unwrap();
        let mut model = SpatialModel::identity(layout, 3, 2);
        for (k, x) in model.lambda.iter_mut().enumerate() {
            *x = k as f64;
        }
        model.w_block_mut(1, 1)[(0, 2)] = C64::new(0.5, -1.0);
        let parts: Vec<_> = (0..2).map(|l| model.restrict(l)).collect();
        assert_eq!(parts[1].lambda(2, 1, 0), model.lambda(2, 1, 2));
        assert_eq!(SpatialModel::concat(&parts).unwrap(), model);
    }

    #[test]
    fn assembled_determinant_is_product_of_blocks() {
        let layout = BlockLayout::new(vec![1, 2]).unwrap();
        let mut model = SpatialModel::identity(layout, 1, 1);
        model.w_block_mut(0, 0)[(0, 0)] = C64::new(2.0, 0.0);
        model.w_block_mut(0, 1)[(0, 1)] = C64::new(0.0, 3.0);
        model.w_block_mut(0, 1)[(1, 1)] = C64::new(4.0, 0.0);
        let full = Lu::factor(&model.assembled_w(0)).unwrap().det().norm();
        let parts: f64 =
            (0..2).map(|l| Lu::factor(model.w_block(0, l)).unwrap().det().norm()).product();
        assert!((full - parts).abs() < 1e-12);
    }
}
