//! Mel filter-bank and cepstral features for multi-sensor accelerograms, cumulative
//! intensity benchmarks, and a masked GRU regressor for peak drift ratios.

pub mod cepstral;
pub mod error;
pub mod features;
pub mod io;
pub mod neural;
pub mod signal;
pub mod spectral;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
