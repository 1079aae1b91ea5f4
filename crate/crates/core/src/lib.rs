//! Bayesian azimuth tracking of moving speakers with autoregressive
//! enhancement feedback, plus the simulation tooling needed to benchmark it.

pub mod angles;
pub mod array;
pub mod doa;
pub mod enhance;
pub mod error;
pub mod rng;
pub mod eval;
pub mod scene;
pub mod stft;
pub mod trackers;
pub mod wav;

pub mod motion;

pub use array::MicArray;
pub use error::{Error, Result};
pub use stft::{analyze, synthesize, Spectrogram, StftConfig};
