//! Reproducible synthetic OHLCV series for smoke runs and tests.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{Bar, PriceSeries};

/// Log-return process: AR(1) noise plus a slow sine and a drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub start_price: f64,
    pub drift: f64,
    pub ar: f64,
    pub noise_sd: f64,
    pub sine_amplitude: f64,
    pub sine_period: f64,
    pub base_volume: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            start_price: 1000.0,
            drift: 0.0002,
            ar: 0.1,
            noise_sd: 0.01,
            sine_amplitude: 0.002,
            sine_period: 60.0,
            base_volume: 1e9,
        }
    }
}

/// Weekdays from `start` on.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

pub fn synthetic_series(n: usize, seed: u64, params: &SynthParams) -> Result<PriceSeries> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let dates = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(), n);
    let mut bars = Vec::with_capacity(n);
    let mut close = params.start_price;
    let mut prev_shock = 0.0;
    for (i, date) in dates.into_iter().enumerate() {
        let open = close;
        if i > 0 {
            let shock = params.ar * prev_shock + noise.sample(&mut rng);
            prev_shock = shock;
            let cycle = params.sine_amplitude * (2.0 * std::f64::consts::PI * i as f64 / params.sine_period).sin();
            close *= (params.drift + cycle + shock).exp();
        }
        let spread = close.max(open) * params.noise_sd * rng.random::<f64>();
        let volume = (params.base_volume * (0.5 + rng.random::<f64>())).round();
        bars.push(Bar {
            date,
            open,
            high: open.max(close) + spread,
            low: open.min(close) - spread,
            close,
            adj_close: close,
            volume,
        });
    }
    PriceSeries::from_bars(bars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = synthetic_series(300, 5, &SynthParams::default()).unwrap();
        let b = synthetic_series(300, 5, &SynthParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.bars().iter().all(|b| b.low <= b.open.min(b.close) && b.high >= b.open.max(b.close)));
        assert!(a.dates().iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
        assert_ne!(a, synthetic_series(300, 6, &SynthParams::default()).unwrap());
    }
}
