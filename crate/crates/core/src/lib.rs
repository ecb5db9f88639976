pub mod arima;
pub mod backtest;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod hybrid;
pub mod lstm;
pub mod market_data;
pub mod metrics;
pub mod pipeline;
mod optim;
pub mod scaler;
pub mod stats;
pub mod synth;
pub mod tuning;
pub mod walkforward;

pub use error::{Error, Result};
