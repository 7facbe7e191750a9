//! Run configuration shared by the command-line tool and the browser demo.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastmnmf::FitOptions;
use crate::hermlin::BlockLayout;
use crate::init::{InitOptions, Method};
use crate::model::FLOOR;
use crate::stft::StftConfig;

/// Estimator family as written in configuration files. `distributed` with
/// `share_spectrograms = false` runs one independent model per subarray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Full,
    Single,
    Distributed,
}

impl std::str::FromStr for MethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "single" => Ok(Self::Single),
            "distributed" => Ok(Self::Distributed),
            _ => Err(Error::InvalidConfig(format!("method: unknown value {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: MethodName,
    /// Channels per subarray, in channel order.
    pub partition: Option<Vec<usize>>,
    pub n_sources: usize,
    pub k_bases: usize,
    pub iterations: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub floor: f64,
    pub seed: u64,
    pub share_spectrograms: bool,
    /// Channel index within the method's channels used for evaluation.
    pub reference_mic: usize,
    pub mixture: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: MethodName::Distributed,
            partition: None,
            n_sources: 3,
            k_bases: 16,
            iterations: 200,
            window_ms: 256.0,
            hop_ms: 64.0,
            floor: FLOOR,
            seed: 0,
            share_spectrograms: true,
            reference_mic: 0,
            mixture: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidConfig(format!("{field}: {why}")));
        if self.n_sources == 0 {
            return bad("n_sources", "must be at least 1");
        }
        if self.k_bases == 0 {
            return bad("k_bases", "must be at least 1");
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return bad("floor", "must be positive");
        }
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0 && self.hop_ms <= self.window_ms) {
            return bad("hop_ms", "must be positive and no longer than window_ms");
        }
        match (&self.partition, self.method) {
            (None, MethodName::Distributed) => return bad("partition", "required for the distributed method"),
            (Some(p), _) if p.is_empty() || p.contains(&0) => return bad("partition", "sizes must be positive"),
            _ => {}
        }
        if !self.share_spectrograms && self.method != MethodName::Distributed {
            return bad("share_spectrograms", "only the distributed method can disable sharing");
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        match (self.method, self.share_spectrograms) {
            (MethodName::Full, _) => Method::Full,
            (MethodName::Single, _) => Method::Single,
            (MethodName::Distributed, true) => Method::Distributed,
            (MethodName::Distributed, false) => Method::Independent,
        }
    }

    /// Partition for an input with `n_chan` channels. Without a partition,
    /// full and single treat the input as one subarray.
    pub fn layout(&self, n_chan: usize) -> Result<BlockLayout> {
        let layout = match &self.partition {
            Some(p) => BlockLayout::new(p.clone())?,
            None => BlockLayout::single(n_chan),
        };
        if layout.total() != n_chan {
            return Err(Error::ShapeMismatch(format!(
                "input has {n_chan} channels, partition {:?} covers {}",
                layout.sizes(),
                layout.total()
            )));
        }
        Ok(layout)
    }

    pub fn stft(&self, sample_rate: u32) -> Result<StftConfig> {
        StftConfig::from_ms(sample_rate, self.window_ms, self.hop_ms)
    }

    pub fn init_options(&self) -> InitOptions {
        InitOptions::new(self.n_sources, self.k_bases, self.seed)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { iters: self.iterations, floor: self.floor }
    }
}
