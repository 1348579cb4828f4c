//! Telemetry forecasting with a predictive GAN, a bidirectional LSTM and
//! their interleaved combination.

pub mod bilstm;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod interleave;
pub mod neural;
pub mod predictive;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
