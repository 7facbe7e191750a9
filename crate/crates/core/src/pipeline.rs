//! End-to-end separation: initialization, estimation and Wiener filtering
//! for each method.

use std::borrow::Cow;

use crate::distributed::fit_distributed;
use crate::error::{Error, Result};
use crate::fastmnmf::{fit_full, Fit, FitObserver, FitOptions};
use crate::hermlin::BlockLayout;
use crate::init::{initialize, InitBundle, InitOptions, Method};
use crate::model::BlockModel;
use crate::separate::{reconstruct, wiener_block, SourceImages};
use crate::stft::{analyze, ObsTensor, Padding, StftConfig};

/// Observations the method works on: the first subarray for `Single`,
/// everything otherwise.
pub fn method_obs<'a>(x: &'a ObsTensor, layout: &BlockLayout, method: Method) -> Cow<'a, ObsTensor> {
    match method {
        Method::Single => Cow::Owned(x.select_channels(layout.range(0))),
        _ => Cow::Borrowed(x),
    }
}

/// Fits `init` on `x_method` (already restricted by [`method_obs`]).
pub fn fit_method(
    x_method: &ObsTensor,
    method: Method,
    init: BlockModel,
    opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<Fit> {
    match method {
        Method::Full | Method::Single => fit_full(x_method, init, opts, observer),
        Method::Distributed | Method::Independent => fit_distributed(x_method, init, opts, observer),
    }
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub init: InitBundle,
    pub fit: Fit,
    pub images: SourceImages,
}

/// Initializes, fits and filters. `x` holds every channel of the array.
pub fn run_method(
    x: &ObsTensor,
    layout: &BlockLayout,
    method: Method,
    init_opts: &InitOptions,
    fit_opts: &FitOptions,
    observer: Option<&mut dyn FitObserver>,
) -> Result<MethodRun> {
    if x.n_chan() != layout.total() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels but the partition covers {}",
            x.n_chan(),
            layout.total()
        )));
    }
    let init = initialize(x, layout, method, init_opts)?;
    let xm = method_obs(x, layout, method);
    let fit = fit_method(&xm, method, init.model.clone(), fit_opts, observer)?;
    let images = wiener_block(&xm, &fit.model, fit_opts.floor)?;
    Ok(MethodRun { method, init, fit, images })
}

/// Waveform-level separation: returns the run and per-source images
/// `[n][m][t]` over the method's channels.
pub fn separate_waveforms(
    mixture: &[Vec<f64>],
    cfg: &StftConfig,
    layout: &BlockLayout,
    method: Method,
    init_opts: &InitOptions,
    fit_opts: &FitOptions,
) -> Result<(MethodRun, Vec<Vec<Vec<f64>>>)> {
    let (x, pad) = analyze(mixture, cfg)?;
    let run = run_method(&x, layout, method, init_opts, fit_opts, None)?;
    let waves = reconstruct(&run.images, cfg, &pad)?;
    Ok((run, waves))
}

/// STFT of a mixture together with its padding record.
pub fn transform(mixture: &[Vec<f64>], cfg: &StftConfig) -> Result<(ObsTensor, Padding)> {
    analyze(mixture, cfg)
}
