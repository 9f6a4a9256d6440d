//! Real-time one-step-ahead forecasting of scalar time series.
//!
//! The centerpiece is a many-to-one stacked LSTM that is retrained on a
//! sliding window after every step and keeps the least-loss epoch of each
//! retraining round. Extended Kalman filter, AR and ARIMA forecasters run
//! through the same rolling protocol for comparison.

pub mod arma;
pub mod config;
pub mod ekf;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lstm;
pub mod rng;
pub mod series;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
