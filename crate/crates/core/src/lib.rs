//! Stacked and spatio-temporal stacked peephole LSTM forecasters.

pub mod data;
pub mod error;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
