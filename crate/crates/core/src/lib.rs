//! Hybrid epidemic forecaster: a spatio-contact SIR model whose
//! time-varying rates are estimated by a spatiotemporal graph network.

pub mod diffcore;
pub mod dataio;
pub mod error;
pub mod export;
pub mod heads;
pub mod io;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod scsir;
pub mod sttemporal;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
