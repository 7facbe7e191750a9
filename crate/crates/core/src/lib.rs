//! Blind source separation with FastMNMF on full, single-subarray and
//! distributed microphone arrays.

pub mod bench;
pub mod config;
pub mod container;
pub mod distributed;
pub mod error;
pub mod eval;
pub mod fastmnmf;
pub mod hermlin;
pub mod init;
pub mod mixsim;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod separate;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
