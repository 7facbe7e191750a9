#![allow(dead_code)]

use dfmnmf::hermlin::{BlockLayout, CMat, C64};
use dfmnmf::model::{BlockModel, NmfModel, ShareMode, SpatialModel};
use dfmnmf::stft::ObsTensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cplx(rng: &mut impl Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn rand_obs(rng: &mut impl Rng, ni: usize, nj: usize, nm: usize) -> ObsTensor {
    ObsTensor::from_fn(ni, nj, nm, |_, _, _| cplx(rng))
}

pub fn rand_nmf(rng: &mut impl Rng, ni: usize, nj: usize, nk: usize, nn: usize) -> NmfModel {
    let t = (0..ni * nk * nn).map(|_| rng.gen_range(0.1..1.0)).collect();
    let v = (0..nk * nj * nn).map(|_| rng.gen_range(0.1..1.0)).collect();
    NmfModel::new(ni, nj, nk, nn, t, v).unwrap()
}

/// Near-identity demixers, well away from singular.
pub fn rand_spatial(rng: &mut impl Rng, layout: BlockLayout, ni: usize, nn: usize) -> SpatialModel {
    let w = (0..ni)
        .flat_map(|_| layout.sizes().to_vec())
        .map(|s| CMat::from_fn(s, s, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } + cplx(rng) * 0.3))
        .collect();
    let lambda = (0..ni * nn * layout.total()).map(|_| rng.gen_range(0.1..1.0)).collect();
    SpatialModel::new(layout, ni, nn, w, lambda).unwrap()
}

pub fn rand_model(rng: &mut impl Rng, layout: &BlockLayout, mode: ShareMode, dims: (usize, usize, usize, usize)) -> BlockModel {
    let (ni, nj, nk, nn) = dims;
    let spatial = rand_spatial(rng, layout.clone(), ni, nn);
    let count = if mode == ShareMode::Shared { 1 } else { layout.n_blocks() };
    let nmf = (0..count).map(|_| rand_nmf(rng, ni, nj, nk, nn)).collect();
    BlockModel { mode, nmf, spatial }
}

/// Random composition of `m` into positive parts.
pub fn rand_partition(rng: &mut impl Rng, m: usize) -> BlockLayout {
    let mut sizes = Vec::new();
    let mut left = m;
    while left > 0 {
        let s = rng.gen_range(1..=left);
        sizes.push(s);
        left -= s;
    }
    BlockLayout::new(sizes).unwrap()
}

/// Every parameter as raw bits, for bitwise comparisons.
pub fn model_bits(model: &BlockModel) -> Vec<u64> {
    let mut out = Vec::new();
    for nmf in &model.nmf {
        out.extend(nmf.t.iter().chain(&nmf.v).map(|v| v.to_bits()));
    }
    for w in &model.spatial.w {
        out.extend(w.as_slice().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]));
    }
    out.extend(model.spatial.lambda.iter().map(|v| v.to_bits()));
    out
}

/// Largest relative difference between corresponding parameters.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
}

pub fn model_values(model: &BlockModel) -> Vec<f64> {
    let mut out = Vec::new();
    for nmf in &model.nmf {
        out.extend(nmf.t.iter().chain(&nmf.v));
    }
    for w in &model.spatial.w {
        out.extend(w.as_slice().iter().flat_map(|c| [c.re, c.im]));
    }
    out.extend(&model.spatial.lambda);
    out
}
