//! Multichannel Wiener filtering in the jointly diagonalized domain and
//! time-domain reconstruction of source images.

use crate::error::{Error, Result};
use crate::hermlin::{Lu, C64};
use crate::model::{demix_into, BlockModel};
use crate::stft::{synthesize, ObsTensor, Padding, StftConfig};

/// Estimated source images, one `I x J x M` tensor per source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceImages {
    pub images: Vec<ObsTensor>,
}

impl SourceImages {
    pub fn n_src(&self) -> usize {
        self.images.len()
    }

    /// `Σ_n c_ijn`.
    pub fn sum(&self) -> ObsTensor {
        let (ni, nj, nm) = self.images[0].shape();
        let mut out = ObsTensor::zeros(ni, nj, nm);
        for img in &self.images {
            for (o, v) in out.as_mut_slice().iter_mut().zip(img.as_slice()) {
                *o += v;
            }
        }
        out
    }
}

/// Per-subarray Wiener filter
/// `c_ijn = W_i^{-H} diag(h_ijn [Λ_in]_mm / η_ijm) W_i^H x_ij`, applied to each
/// block with the NMF model that drives it. A one-block model gives the
/// full-array filter.
pub fn wiener_block(x: &ObsTensor, model: &BlockModel, floor: f64) -> Result<SourceImages> {
    model.validate()?;
    let spatial = &model.spatial;
    let (ni, nj, nm) = x.shape();
    if spatial.n_freq != ni || spatial.n_chan() != nm || model.nmf[0].n_frames != nj {
        return Err(Error::ShapeMismatch("model does not match the observations".into()));
    }
    let nn = spatial.n_src;
    let layout = &spatial.layout;
    let spectrograms: Vec<Vec<f64>> = model.nmf.iter().map(|m| m.spectrogram()).collect();
    let mut images = vec![ObsTensor::zeros(ni, nj, nm); nn];
    let mut y = vec![C64::new(0.0, 0.0); nm];
    let mut g = vec![C64::new(0.0, 0.0); nm];
    for i in 0..ni {
        for l in 0..layout.n_blocks() {
            let range = layout.range(l);
            let size = range.len();
            let w = spatial.w_block(i, l);
            let w_inv_h = Lu::factor(w).map_err(|_| Error::SingularDemixer { bin: i })?.inverse().adjoint();
            let h = match model.mode {
                crate::model::ShareMode::Shared => &spectrograms[0],
                crate::model::ShareMode::Independent => &spectrograms[l],
            };
            for j in 0..nj {
                let xs = &x.frame(i, j)[range.clone()];
                demix_into(w, xs, &mut y[..size]);
                let h_ij = &h[(i * nj + j) * nn..(i * nj + j + 1) * nn];
                let mut eta = vec![0.0; size];
                for (n, &hn) in h_ij.iter().enumerate() {
                    let lam = &spatial.lambda_row(i, n)[range.clone()];
                    for mu in 0..size {
                        eta[mu] += hn * lam[mu];
                    }
                }
                eta.iter_mut().for_each(|e| *e = e.max(floor));
                for (n, img) in images.iter_mut().enumerate() {
                    let lam = &spatial.lambda_row(i, n)[range.clone()];
                    for mu in 0..size {
                        g[mu] = y[mu] * (h_ij[n] * lam[mu] / eta[mu]);
                    }
                    let out = &mut img.frame_mut(i, j)[range.clone()];
                    for (a, o) in out.iter_mut().enumerate() {
                        let row = w_inv_h.row(a);
                        *o = (0..size).map(|b| row[b] * g[b]).sum();
                    }
                }
            }
        }
    }
    Ok(SourceImages { images })
}

/// Full-array Wiener filter; the model must have a single block.
pub fn wiener_full(x: &ObsTensor, model: &BlockModel, floor: f64) -> Result<SourceImages> {
    if model.spatial.n_blocks() != 1 {
        return Err(Error::InvalidConfig("wiener_full needs a one-block model".into()));
    }
    wiener_block(x, model, floor)
}

/// Per-source multichannel waveforms `[n][m][t]`.
pub fn reconstruct(images: &SourceImages, cfg: &StftConfig, pad: &Padding) -> Result<Vec<Vec<Vec<f64>>>> {
    images.images.iter().map(|img| synthesize(img, cfg, pad)).collect()
}
