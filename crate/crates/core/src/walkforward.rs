//! Non-anchored walk-forward windows and stitching of per-walk forecasts.

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub train_len: usize,
    pub valid_len: usize,
    pub test_len: usize,
    pub step: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            train_len: 1000,
            valid_len: 250,
            test_len: 250,
            step: 250,
        }
    }
}

impl WalkConfig {
    pub fn window_len(&self) -> usize {
        self.train_len + self.valid_len + self.test_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Walk {
    pub walk_index: usize,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl Walk {
    /// Train and validation together.
    pub fn in_sample(&self) -> Range<usize> {
        self.train.start..self.valid.end
    }

    pub fn span(&self) -> Range<usize> {
        self.train.start..self.test.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPlan {
    pub walks: Vec<Walk>,
    pub total_len: usize,
    pub config: WalkConfig,
    /// Observations after the last test window.
    pub trailing_dropped: usize,
}

impl WalkPlan {
    /// First and one-past-last out-of-sample index.
    pub fn oos_range(&self) -> Range<usize> {
        match (self.walks.first(), self.walks.last()) {
            (Some(a), Some(b)) => a.test.start..b.test.end,
            _ => 0..0,
        }
    }

    /// Writes `walk,train_start,train_end,valid_start,valid_end,test_start,test_end`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "walk",
            "train_start",
            "train_end",
            "valid_start",
            "valid_end",
            "test_start",
            "test_end",
        ])?;
        for walk in &self.walks {
            w.write_record(
                [
                    walk.walk_index,
                    walk.train.start,
                    walk.train.end,
                    walk.valid.start,
                    walk.valid.end,
                    walk.test.start,
                    walk.test.end,
                ]
                .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn plan_walks(total_len: usize, config: WalkConfig) -> Result<WalkPlan> {
    if config.train_len == 0 || config.valid_len == 0 || config.test_len == 0 || config.step == 0 {
        return Err(Error::InvalidConfig(format!("walk lengths must be positive: {config:?}")));
    }
    let window = config.window_len();
    if total_len < window {
        return Err(Error::SeriesTooShort {
            needed: window,
            actual: total_len,
        });
    }
    let mut walks = Vec::new();
    let mut start = 0;
    while start + window <= total_len {
        let v = start + config.train_len;
        let t = v + config.valid_len;
        walks.push(Walk {
            walk_index: walks.len(),
            train: start..v,
            valid: v..t,
            test: t..t + config.test_len,
        });
        start += config.step;
    }
    let last_end = walks.last().map(|w| w.test.end).unwrap_or(0);
    Ok(WalkPlan {
        walks,
        total_len,
        config,
        trailing_dropped: total_len - last_end,
    })
}

/// Out-of-sample forecasts of one walk, one per test day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPrediction {
    pub walk_index: usize,
    pub model: String,
    /// Series index of the first test day.
    pub test_start: usize,
    pub dates: Vec<NaiveDate>,
    pub actual_close: Vec<f64>,
    pub predicted_close: Vec<f64>,
}

/// Result of one walk: forecasts, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WalkOutcome {
    Completed(WalkPrediction),
    Failed { walk_index: usize, reason: String },
}

impl WalkOutcome {
    pub fn walk_index(&self) -> usize {
        match self {
            Self::Completed(p) => p.walk_index,
            Self::Failed { walk_index, .. } => *walk_index,
        }
    }
}

/// Forecasts over the whole out-of-sample span. `None` marks days of
/// failed walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedPredictions {
    pub start: usize,
    pub predicted: Vec<Option<f64>>,
    pub failed_walks: Vec<usize>,
}

impl StitchedPredictions {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.predicted.len()
    }

    pub fn gap_days(&self) -> usize {
        self.predicted.iter().filter(|p| p.is_none()).count()
    }
}

pub fn stitch(outcomes: &[WalkOutcome], plan: &WalkPlan) -> Result<StitchedPredictions> {
    let oos = plan.oos_range();
    let mut predicted = vec![None; oos.len()];
    let mut failed_walks = Vec::new();
    for walk in &plan.walks {
        let found: Vec<&WalkOutcome> = outcomes.iter().filter(|o| o.walk_index() == walk.walk_index).collect();
        match found.as_slice() {
            [WalkOutcome::Completed(p)] => {
                if p.predicted_close.len() != walk.test.len() || p.test_start != walk.test.start {
                    return Err(Error::ShapeMismatch(format!(
                        "walk {} has {} forecasts from index {}, expected {} from {}",
                        walk.walk_index,
                        p.predicted_close.len(),
                        p.test_start,
                        walk.test.len(),
                        walk.test.start
                    )));
                }
                for (k, v) in p.predicted_close.iter().enumerate() {
                    predicted[walk.test.start - oos.start + k] = Some(*v);
                }
            }
            [WalkOutcome::Failed { .. }] => failed_walks.push(walk.walk_index),
            _ => return Err(Error::CoverageGap(walk.walk_index)),
        }
    }
    Ok(StitchedPredictions {
        start: oos.start,
        predicted,
        failed_walks,
    })
}

/// One row of the prediction CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub actual_close: f64,
    pub predicted_close: Option<f64>,
    pub model: String,
    pub walk_index: usize,
}

impl WalkPrediction {
    pub fn rows(&self) -> Vec<PredictionRow> {
        (0..self.dates.len())
            .map(|k| PredictionRow {
                date: self.dates[k],
                actual_close: self.actual_close[k],
                predicted_close: Some(self.predicted_close[k]),
                model: self.model.clone(),
                walk_index: self.walk_index,
            })
            .collect()
    }
}

/// Writes `date,actual_close,predicted_close,model,walk_index`; a missing
/// forecast is an empty field.
pub fn write_predictions_csv<W: std::io::Write>(writer: W, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "actual_close", "predicted_close", "model", "walk_index"])?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            r.actual_close.to_string(),
            r.predicted_close.map(|v| v.to_string()).unwrap_or_default(),
            r.model.clone(),
            r.walk_index.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv<R: std::io::Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Parse(format!("prediction row with {} fields", rec.len())));
        }
        let bad = |s: &str| Error::Parse(format!("bad field `{s}`"));
        out.push(PredictionRow {
            date: NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad(&rec[0]))?,
            actual_close: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            predicted_close: if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse().map_err(|_| bad(&rec[2]))?)
            },
            model: rec[3].to_string(),
            walk_index: rec[4].parse().map_err(|_| bad(&rec[4]))?,
        });
    }
    Ok(out)
}
