//! Trading signals from next-day forecasts, proportional transaction costs
//! and equity curves.
//!
//! A signal decided at the close of day `t` earns the close-to-close return
//! of day `t + 1`. Costs are charged on the day the new position first
//! earns, as `cost_rate * |position[t] - position[t - 1]|` with a flat
//! position before the first signal.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COST_RATE: f64 = 0.001;

/// Strategy returns at or below this level are clamped so equity stays
/// positive; the curve is then marked as ruined.
pub const RUIN_FLOOR: f64 = -0.9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyMode {
    LongOnly,
    LongShort,
}

impl StrategyMode {
    pub fn short_position(self) -> i8 {
        match self {
            Self::LongOnly => 0,
            Self::LongShort => -1,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::LongOnly => "long_only",
            Self::LongShort => "long_short",
        }
    }
}

impl std::fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LongOnly => "LongOnly",
            Self::LongShort => "LongShort",
        })
    }
}

impl std::str::FromStr for StrategyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "longonly" => Ok(Self::LongOnly),
            "longshort" => Ok(Self::LongShort),
            other => Err(Error::Parse(format!("unknown strategy mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSeries {
    /// Decision dates, one per position.
    pub dates: Vec<NaiveDate>,
    pub positions: Vec<i8>,
    pub mode: StrategyMode,
}

/// `predictions[t]` forecasts the close after `closes[t]`. Long when the
/// forecast is strictly above the close, otherwise flat or short.
pub fn signals(predictions: &[f64], closes: &[f64], mode: StrategyMode) -> Result<Vec<i8>> {
    if predictions.len() != closes.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: closes.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(closes)
        .map(|(p, c)| if p > c { 1 } else { mode.short_position() })
        .collect())
}

/// As [`signals`], with missing forecasts (failed walks) held flat.
pub fn signals_with_gaps(predictions: &[Option<f64>], closes: &[f64], mode: StrategyMode) -> Result<Vec<i8>> {
    if predictions.len() != closes.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: closes.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(closes)
        .map(|(p, c)| match p {
            Some(p) if p > c => 1,
            Some(_) => mode.short_position(),
            None => 0,
        })
        .collect())
}

impl SignalSeries {
    pub fn new(dates: Vec<NaiveDate>, positions: Vec<i8>, mode: StrategyMode) -> Result<Self> {
        if dates.len() != positions.len() {
            return Err(Error::LengthMismatch {
                left: dates.len(),
                right: positions.len(),
            });
        }
        Ok(Self { dates, positions, mode })
    }

    pub fn from_predictions(
        dates: Vec<NaiveDate>,
        predictions: &[Option<f64>],
        closes: &[f64],
        mode: StrategyMode,
    ) -> Result<Self> {
        Self::new(dates, signals_with_gaps(predictions, closes, mode)?, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    /// `n + 1` dates; the first is the decision date of the first position.
    pub dates: Vec<NaiveDate>,
    /// `n + 1` values starting at 1.0.
    pub values: Vec<f64>,
    pub strategy_returns: Vec<f64>,
    pub cost_paid: Vec<f64>,
    /// Position earning each return; empty for derived curves.
    pub positions: Vec<i8>,
    pub ruined: bool,
}

impl EquityCurve {
    pub fn len(&self) -> usize {
        self.strategy_returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategy_returns.is_empty()
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap_or(&1.0)
    }

    pub fn total_cost(&self) -> f64 {
        self.cost_paid.iter().sum()
    }

    /// Builds a curve by compounding `returns` from 1.0.
    pub fn from_returns(dates: Vec<NaiveDate>, returns: Vec<f64>, cost_paid: Vec<f64>, positions: Vec<i8>) -> Result<Self> {
        if dates.len() != returns.len() + 1 || cost_paid.len() != returns.len() {
            return Err(Error::LengthMismatch {
                left: dates.len(),
                right: returns.len() + 1,
            });
        }
        let mut ruined = false;
        let mut values = Vec::with_capacity(returns.len() + 1);
        values.push(1.0);
        let mut clamped = Vec::with_capacity(returns.len());
        let mut v = 1.0;
        for r in returns {
            let r = if r <= RUIN_FLOOR {
                ruined = true;
                RUIN_FLOOR
            } else {
                r
            };
            v *= 1.0 + r;
            values.push(v);
            clamped.push(r);
        }
        Ok(Self {
            dates,
            values,
            strategy_returns: clamped,
            cost_paid,
            positions,
            ruined,
        })
    }

    /// Writes `date,position,strategy_return,cost,equity`. The first row is
    /// the starting point with zero return, zero cost and equity 1.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "position", "strategy_return", "cost", "equity"])?;
        w.write_record([
            self.dates[0].to_string(),
            "0".into(),
            "0".into(),
            "0".into(),
            self.values[0].to_string(),
        ])?;
        for k in 0..self.len() {
            let pos = self.positions.get(k).map(|p| p.to_string()).unwrap_or_default();
            w.write_record([
                self.dates[k + 1].to_string(),
                pos,
                self.strategy_returns[k].to_string(),
                self.cost_paid[k].to_string(),
                self.values[k + 1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a curve written by [`EquityCurve::write_csv`]. Values are taken
    /// from the file as written.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut dates = Vec::new();
        let mut values = Vec::new();
        let mut returns = Vec::new();
        let mut costs = Vec::new();
        let mut positions = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Parse(format!("equity row with {} fields", rec.len())));
            }
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("bad date `{}`: {e}", &rec[0])))?;
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`"))) };
            dates.push(date);
            values.push(num(&rec[4])?);
            if i > 0 {
                returns.push(num(&rec[2])?);
                costs.push(num(&rec[3])?);
                if !rec[1].is_empty() {
                    positions.push(rec[1].parse::<i8>().map_err(|_| Error::Parse(format!("bad position `{}`", &rec[1])))?);
                }
            }
        }
        if dates.is_empty() {
            return Err(Error::EmptyInput);
        }
        let ruined = returns.iter().any(|r| *r <= RUIN_FLOOR);
        Ok(Self {
            dates,
            values,
            strategy_returns: returns,
            cost_paid: costs,
            positions,
            ruined,
        })
    }
}

/// Simple returns of consecutive closes.
fn close_returns(closes: &[f64]) -> Vec<f64> {
    closes.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Equity of holding `signals.positions[t]` over `closes[t] -> closes[t+1]`.
/// `closes` and `dates` carry one trailing observation beyond the signals.
pub fn equity_curve(signals: &SignalSeries, closes: &[f64], dates: &[NaiveDate], cost_rate: f64) -> Result<EquityCurve> {
    let n = signals.positions.len();
    if closes.len() != n + 1 {
        return Err(Error::LengthMismatch {
            left: closes.len(),
            right: n + 1,
        });
    }
    if dates.len() != n + 1 {
        return Err(Error::LengthMismatch {
            left: dates.len(),
            right: n + 1,
        });
    }
    if dates[..n] != signals.dates[..] {
        return Err(Error::AlignmentError("signal dates differ from price dates".into()));
    }
    let (returns, costs) = strategy_returns(&signals.positions, closes, cost_rate)?;
    EquityCurve::from_returns(dates.to_vec(), returns, costs, signals.positions.clone())
}

/// Per-day strategy returns and costs of holding `positions[t]` over
/// `closes[t] -> closes[t+1]`, starting flat.
pub fn strategy_returns(positions: &[i8], closes: &[f64], cost_rate: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = positions.len();
    if closes.len() != n + 1 {
        return Err(Error::LengthMismatch {
            left: closes.len(),
            right: n + 1,
        });
    }
    let bench = close_returns(closes);
    let mut returns = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut prev = 0i8;
    for (k, &pos) in positions.iter().enumerate() {
        let cost = cost_rate * f64::from((pos - prev).abs());
        returns.push(f64::from(pos) * bench[k] - cost);
        costs.push(cost);
        prev = pos;
    }
    Ok((returns, costs))
}

/// Long from the first day with a single entry cost.
pub fn buy_and_hold(closes: &[f64], dates: &[NaiveDate], cost_rate: f64) -> Result<EquityCurve> {
    if closes.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            actual: closes.len(),
        });
    }
    let n = closes.len() - 1;
    let signals = SignalSeries::new(dates[..n].to_vec(), vec![1; n], StrategyMode::LongOnly)?;
    equity_curve(&signals, closes, dates, cost_rate)
}
