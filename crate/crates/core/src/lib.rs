//! Neonatal EEG seizure detection with a channel-shared temporal encoder,
//! graph-attention spatial fusion and a mixture-of-experts ensemble.

pub mod data;
pub mod diff;
pub mod ensemble;
pub mod models;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod training;

pub use error::{Error, Result};
