//! Distributed FastMNMF: block-diagonal demixers and `Λ`, one block per
//! subarray, with spectrograms shared across subarrays or (as an ablation)
//! estimated independently per subarray.

use crate::error::{Error, Result};
use crate::fastmnmf::{fit_shared, run_fit, Estimator, Fit, FitObserver, FitOptions};
use crate::hermlin::BlockLayout;
use crate::model::{BlockModel, NmfModel, ShareMode, SpatialModel};
use crate::stft::ObsTensor;

/// One-based `(l, μ)` to one-based global microphone index.
pub fn map_index(layout: &BlockLayout, l: usize, mu: usize) -> Result<usize> {
    if l == 0 || mu == 0 {
        return Err(Error::IndexOutOfRange(format!("indices are one based (got l={l}, μ={mu})")));
    }
    Ok(layout.map_index(l - 1, mu - 1)? + 1)
}

/// Observations of subarray `l` only.
pub fn subarray(x: &ObsTensor, layout: &BlockLayout, l: usize) -> ObsTensor {
    x.select_channels(layout.range(l))
}

/// Distributed cost: sum over subarrays of the per-subarray likelihood
/// terms, each using the NMF model that drives it.
pub fn cost_dist(x: &ObsTensor, model: &BlockModel, floor: f64) -> Result<f64> {
    model.validate()?;
    match model.mode {
        ShareMode::Shared => {
            Estimator::new(x, model.nmf[0].clone(), model.spatial.clone(), floor)?.cost()
        }
        ShareMode::Independent => {
            let layout = &model.spatial.layout;
            let mut total = 0.0;
            for l in 0..layout.n_blocks() {
                let xl = subarray(x, layout, l);
                total += Estimator::new(&xl, model.nmf[l].clone(), model.spatial.restrict(l), floor)?
                    .cost()?;
            }
            Ok(total)
        }
    }
}

/// IP update of column `mu` (zero based) of block `l` of every `W_i`,
/// using only the subarray's channels.
pub fn ip_update_block(
    x: &ObsTensor,
    nmf: &NmfModel,
    spatial: &mut SpatialModel,
    l: usize,
    mu: usize,
    floor: f64,
) -> Result<()> {
    if l >= spatial.n_blocks() || mu >= spatial.layout.size(l) {
        return Err(Error::IndexOutOfRange(format!("block {l}, column {mu}")));
    }
    let mut est = Estimator::new(x, nmf.clone(), spatial.clone(), floor)?;
    est.ip_update(l, mu);
    *spatial = est.into_parts().1;
    Ok(())
}

/// One round of `t`, `v`, `Λ` updates. Shared mode runs them once over the
/// concatenated channel axis; independent mode runs them per subarray.
pub fn mm_update_shared(x: &ObsTensor, model: &mut BlockModel, floor: f64) -> Result<()> {
    model.validate()?;
    let step = |est: &mut Estimator<'_>| {
        est.update_t();
        est.update_v();
        est.update_lambda();
    };
    match model.mode {
        ShareMode::Shared => {
            let mut est = Estimator::new(x, model.nmf[0].clone(), model.spatial.clone(), floor)?;
            step(&mut est);
            let (nmf, spatial) = est.into_parts();
            model.nmf[0] = nmf;
            model.spatial = spatial;
        }
        ShareMode::Independent => {
            let layout = model.spatial.layout.clone();
            let mut parts = Vec::with_capacity(layout.n_blocks());
            for l in 0..layout.n_blocks() {
                let xl = subarray(x, &layout, l);
                let mut est = Estimator::new(&xl, model.nmf[l].clone(), model.spatial.restrict(l), floor)?;
                step(&mut est);
                let (nmf, spatial) = est.into_parts();
                model.nmf[l] = nmf;
                parts.push(spatial);
            }
            model.spatial = SpatialModel::concat(&parts)?;
        }
    }
    Ok(())
}

fn assemble_independent(ests: &[Estimator<'_>]) -> Result<BlockModel> {
    let spatial = SpatialModel::concat(&ests.iter().map(|e| e.spatial().clone()).collect::<Vec<_>>())?;
    Ok(BlockModel {
        mode: ShareMode::Independent,
        nmf: ests.iter().map(|e| e.nmf().clone()).collect(),
        spatial,
    })
}

/// Distributed FastMNMF over `init.spatial.layout`; the share mode is taken
/// from `init`.
pub fn fit_distributed(
    x: &ObsTensor,
    init: BlockModel,
    opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<Fit> {
    init.validate()?;
    if x.n_chan() != init.spatial.n_chan() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels but the partition covers {}",
            x.n_chan(),
            init.spatial.n_chan()
        )));
    }
    match init.mode {
        ShareMode::Shared => fit_shared(x, init, opts, observer),
        ShareMode::Independent => {
            let layout = init.spatial.layout.clone();
            let subs: Vec<ObsTensor> = (0..layout.n_blocks()).map(|l| subarray(x, &layout, l)).collect();
            let mut ests = Vec::with_capacity(layout.n_blocks());
            for (l, xl) in subs.iter().enumerate() {
                ests.push(Estimator::new(xl, init.nmf[l].clone(), init.spatial.restrict(l), opts.floor)?);
            }
            let report = run_fit(&mut ests, opts, &assemble_independent, observer)?;
            let model = assemble_independent(&ests)?;
            Ok(Fit { model, report })
        }
    }
}

/// FastMNMF on one subarray's observations.
pub fn fit_single(
    x_sub: &ObsTensor,
    init: BlockModel,
    opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<Fit> {
    crate::fastmnmf::fit_full(x_sub, init, opts, observer)
}
