//! Heart and lung sound separation from single-channel chest recordings:
//! DSP primitives, a small autograd engine, the masking separator, synthetic
//! mixtures, separation metrics, vital-sign estimation, training and
//! benchmarking.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod nn;
pub mod signal;
pub mod train;
pub mod vitals;

pub use error::{Error, Result};
