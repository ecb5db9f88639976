//! Per-walk forecasting: the ARIMA baseline, the plain LSTM and the
//! LSTM-ARIMA hybrid that feeds ARIMA innovations to the LSTM.
//!
//! Feature rows are `close, volatility, volume[, arima_residual]`. The
//! forecast for day `t` uses the `seq_len` rows strictly before `t`, so it
//! depends only on data up to `t - 1`. ARIMA is fitted once per walk on the
//! in-sample closes; innovations past the in-sample end come from the
//! frozen fit.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::arima::{self, ArimaFit, ArimaSpec, OrderSearch};
use crate::error::{Error, Result};
use crate::lstm::{init_network, predict_series, train, SequenceDataset, TrainConfig};
use crate::market_data::PriceSeries;
use crate::scaler::FeatureScaler;
use crate::tuning::HyperParams;
use crate::walkforward::{Walk, WalkPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "ARIMA")]
    Arima,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM-ARIMA")]
    LstmArima,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Arima, ModelKind::Lstm, ModelKind::LstmArima];

    pub fn slug(self) -> &'static str {
        match self {
            Self::Arima => "arima",
            Self::Lstm => "lstm",
            Self::LstmArima => "lstm_arima",
        }
    }

    pub fn uses_lstm(self) -> bool {
        !matches!(self, Self::Arima)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Arima => "ARIMA",
            Self::Lstm => "LSTM",
            Self::LstmArima => "LSTM-ARIMA",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "arima" => Ok(Self::Arima),
            "lstm" => Ok(Self::Lstm),
            "lstmarima" | "hybrid" => Ok(Self::LstmArima),
            other => Err(Error::Parse(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureColumn {
    Close,
    Volatility,
    Volume,
    ArimaResidual,
}

/// Raw feature rows for the whole series with scalers fitted on one range.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<FeatureColumn>,
    /// One row per series observation.
    pub rows: Vec<Vec<f64>>,
    pub scalers: Vec<FeatureScaler>,
    /// Rows the scalers were fitted on.
    pub fit_range: Range<usize>,
}

impl FeatureMatrix {
    pub fn scaled_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(&self.scalers).map(|(v, s)| s.transform(*v)).collect())
            .collect()
    }

    /// Scaler of the close column, used for targets and predictions.
    pub fn close_scaler(&self) -> &FeatureScaler {
        &self.scalers[0]
    }
}

/// Volatility column with gaps forward-filled and leading gaps set to 0.
pub fn volatility_feature(series: &PriceSeries) -> Vec<f64> {
    let mut last = 0.0;
    series
        .volatility()
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect()
}

pub fn build_features(series: &PriceSeries, residuals: Option<&[f64]>, fit_range: Range<usize>) -> Result<FeatureMatrix> {
    let n = series.len();
    if let Some(r) = residuals {
        if r.len() != n {
            return Err(Error::AlignmentError(format!("{} residuals for {n} observations", r.len())));
        }
    }
    if fit_range.is_empty() || fit_range.end > n {
        return Err(Error::ShapeMismatch(format!("fit range {fit_range:?} for {n} observations")));
    }
    let closes = series.closes();
    let vol = volatility_feature(series);
    let volume = series.volumes();
    let mut columns = vec![FeatureColumn::Close, FeatureColumn::Volatility, FeatureColumn::Volume];
    let mut cols: Vec<&[f64]> = vec![&closes, &vol, &volume];
    if let Some(r) = residuals {
        columns.push(FeatureColumn::ArimaResidual);
        cols.push(r);
    }
    let scalers = cols.iter().map(|c| FeatureScaler::fit(&c[fit_range.clone()])).collect();
    let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok(FeatureMatrix {
        columns,
        rows,
        scalers,
        fit_range,
    })
}

/// Summary of the per-walk ARIMA fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaSummary {
    pub spec: ArimaSpec,
    pub constant: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub aic: f64,
    pub bic: f64,
}

impl From<&ArimaFit> for ArimaSummary {
    fn from(f: &ArimaFit) -> Self {
        Self {
            spec: f.spec,
            constant: f.constant,
            phi: f.phi.clone(),
            theta: f.theta.clone(),
            sigma2: f.sigma2,
            aic: f.aic,
            bic: f.bic,
        }
    }
}

/// Order search on the walk's in-sample closes.
pub fn fit_walk_arima(walk: &Walk, closes: &[f64], search: &OrderSearch) -> Result<ArimaFit> {
    Ok(search.run(&closes[walk.in_sample()])?.best)
}

/// Innovations of the frozen walk fit over the walk span, placed in a
/// series-length vector (zero outside the span and in the burn-in).
pub fn walk_residuals(walk: &Walk, closes: &[f64], fit: &ArimaFit) -> Result<Vec<f64>> {
    let span = walk.span();
    let e = arima::innovations(fit, &closes[span.clone()])?;
    let mut out = vec![0.0; closes.len()];
    out[span].copy_from_slice(&e);
    Ok(out)
}

/// Features and (for the hybrid) the ARIMA fit of one walk, shared by all
/// tuning trials.
#[derive(Debug, Clone)]
pub struct PreparedWalk {
    pub features: FeatureMatrix,
    pub scaled: Vec<Vec<f64>>,
    pub arima: Option<ArimaSummary>,
}

pub fn prepare_walk(walk: &Walk, series: &PriceSeries, model: ModelKind, search: &OrderSearch) -> Result<PreparedWalk> {
    if walk.test.end > series.len() {
        return Err(Error::ShapeMismatch(format!("walk ends at {} beyond {} observations", walk.test.end, series.len())));
    }
    let (residuals, arima) = match model {
        ModelKind::LstmArima => {
            let closes = series.closes();
            let fit = fit_walk_arima(walk, &closes, search)?;
            (Some(walk_residuals(walk, &closes, &fit)?), Some(ArimaSummary::from(&fit)))
        }
        ModelKind::Lstm => (None, None),
        ModelKind::Arima => return Err(Error::InvalidConfig("ARIMA walks do not use LSTM features".into())),
    };
    prepare_with_residuals(walk, series, residuals.as_deref(), arima)
}

/// As [`prepare_walk`] with caller-supplied residuals (`None` for the plain
/// LSTM).
pub fn prepare_with_residuals(
    walk: &Walk,
    series: &PriceSeries,
    residuals: Option<&[f64]>,
    arima: Option<ArimaSummary>,
) -> Result<PreparedWalk> {
    let features = build_features(series, residuals, walk.train.clone())?;
    let scaled = features.scaled_rows();
    Ok(PreparedWalk { features, scaled, arima })
}

/// Training limits shared by every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmWalkOutput {
    pub valid_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Index of the first training target.
    pub train_first_target: usize,
    /// Price-unit forecasts for training targets, validation days and test days.
    pub train_predictions: Vec<f64>,
    pub valid_predictions: Vec<f64>,
    pub test_predictions: Vec<f64>,
}

/// Trains one network on the walk's training targets with early stopping
/// on its validation days, and forecasts every day of all three ranges.
pub fn train_lstm_walk(
    walk: &Walk,
    prepared: &PreparedWalk,
    params: &HyperParams,
    settings: &TrainSettings,
    seed: u64,
) -> Result<LstmWalkOutput> {
    let rows = &prepared.scaled;
    if prepared.features.fit_range != walk.train {
        return Err(Error::InvalidConfig("feature scalers were not fitted on the training range".into()));
    }
    let seq_len = params.seq_len;
    if seq_len == 0 || walk.train.len() <= seq_len {
        return Err(Error::SeriesTooShort {
            needed: seq_len + 1,
            actual: walk.train.len(),
        });
    }
    let target: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let first = walk.train.start + seq_len;
    let train_set = SequenceDataset::from_rows(rows, &target, seq_len, first..walk.train.end)?;
    let valid_set = SequenceDataset::from_rows(rows, &target, seq_len, walk.valid.clone())?;
    let test_set = SequenceDataset::from_rows(rows, &target, seq_len, walk.test.clone())?;
    let input_size = prepared.features.columns.len();
    let net = init_network(input_size, params.neurons, params.layers, params.dropout, seed)?;
    let cfg = TrainConfig {
        optimizer: params.optimizer,
        learning_rate: params.learning_rate,
        batch_size: params.batch_size,
        max_epochs: settings.max_epochs,
        patience: settings.patience,
        seed,
        clip_norm: settings.clip_norm,
    };
    let outcome = train(net, &train_set, &valid_set, &cfg)?;
    let scaler = prepared.features.close_scaler();
    Ok(LstmWalkOutput {
        valid_loss: outcome.best_valid_loss(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        train_first_target: first,
        train_predictions: predict_series(&outcome.net, &train_set, scaler)?,
        valid_predictions: predict_series(&outcome.net, &valid_set, scaler)?,
        test_predictions: predict_series(&outcome.net, &test_set, scaler)?,
    })
}

fn walk_prediction(walk: &Walk, series: &PriceSeries, model: ModelKind, predicted: Vec<f64>) -> WalkPrediction {
    let closes = series.closes();
    let dates = series.dates();
    WalkPrediction {
        walk_index: walk.walk_index,
        model: model.to_string(),
        test_start: walk.test.start,
        dates: dates[walk.test.clone()].to_vec(),
        actual_close: closes[walk.test.clone()].to_vec(),
        predicted_close: predicted,
    }
}

/// ARIMA baseline: order search on the in-sample closes, then rolling
/// one-step forecasts over the test range with frozen coefficients.
pub fn run_arima_walk(walk: &Walk, series: &PriceSeries, search: &OrderSearch) -> Result<(WalkPrediction, ArimaSummary)> {
    let closes = series.closes();
    let fit = fit_walk_arima(walk, &closes, search)?;
    let base = walk.train.start;
    let history = &closes[base..walk.test.end];
    let predicted = arima::rolling_forecasts(&fit, history, walk.test.start - base..walk.test.end - base)?;
    Ok((walk_prediction(walk, series, ModelKind::Arima, predicted), ArimaSummary::from(&fit)))
}

/// One untuned LSTM or LSTM-ARIMA walk with fixed hyperparameters.
pub fn run_hybrid_walk(
    walk: &Walk,
    series: &PriceSeries,
    model: ModelKind,
    search: &OrderSearch,
    params: &HyperParams,
    settings: &TrainSettings,
    seed: u64,
) -> Result<WalkPrediction> {
    let prepared = prepare_walk(walk, series, model, search)?;
    let out = train_lstm_walk(walk, &prepared, params, settings, seed)?;
    Ok(walk_prediction(walk, series, model, out.test_predictions))
}

/// Wraps deployed test forecasts as a [`WalkPrediction`].
pub fn to_walk_prediction(walk: &Walk, series: &PriceSeries, model: ModelKind, predicted: Vec<f64>) -> WalkPrediction {
    walk_prediction(walk, series, model, predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::OptimizerKind;
    use crate::market_data::Bar;
    use chrono::NaiveDate;

    fn synthetic(n: usize, volume: impl Fn(usize) -> f64) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        let bars = (0..n)
            .map(|i| {
                let c = 100.0 + 5.0 * (i as f64 * 0.2).sin() + 0.05 * i as f64;
                Bar {
                    date: start + chrono::Days::new(i as u64),
                    open: c,
                    high: c + 1.0,
                    low: c - 1.0,
                    close: c,
                    adj_close: c,
                    volume: volume(i),
                }
            })
            .collect();
        PriceSeries::from_bars(bars).unwrap()
    }

    fn small_walk() -> Walk {
        Walk {
            walk_index: 0,
            train: 0..120,
            valid: 120..150,
            test: 150..170,
        }
    }

    fn params() -> HyperParams {
        HyperParams {
            neurons: 6,
            layers: 2,
            dropout: 0.1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 16,
            seq_len: 5,
        }
    }

    fn settings() -> TrainSettings {
        TrainSettings {
            max_epochs: 5,
            ..TrainSettings::default()
        }
    }

    #[test]
    fn feature_layout() {
        let s = synthetic(60, |i| 1000.0 + i as f64);
        let plain = build_features(&s, None, 0..40).unwrap();
        assert_eq!(plain.columns.len(), 3);
        let res = vec![0.5; 60];
        let hybrid = build_features(&s, Some(&res), 0..40).unwrap();
        assert_eq!(
            hybrid.columns,
            vec![FeatureColumn::Close, FeatureColumn::Volatility, FeatureColumn::Volume, FeatureColumn::ArimaResidual]
        );
        assert!(matches!(build_features(&s, Some(&res[..59]), 0..40), Err(Error::AlignmentError(_))));
        // Scalers only see the fitting rows.
        let closes = s.closes();
        let lo = closes[..40].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(plain.close_scaler().col_min, lo);
    }

    #[test]
    fn constant_volume_maps_to_midpoint() {
        let s = synthetic(60, |_| 5000.0);
        let f = build_features(&s, None, 0..40).unwrap();
        assert!(f.scalers[2].is_degenerate());
        assert!(f.scaled_rows().iter().all(|r| r[2] == 0.0));
    }

    #[test]
    fn volatility_is_forward_filled_from_zero() {
        let s = synthetic(40, |_| 1.0);
        let v = volatility_feature(&s);
        assert!(v[..21].iter().all(|x| *x == 0.0));
        assert!(v[21..].iter().all(|x| *x > 0.0));
    }

    #[test]
    fn prediction_count_matches_test_window() {
        let s = synthetic(170, |i| 1000.0 + (i % 7) as f64);
        let walk = small_walk();
        let search = OrderSearch {
            p_max: 1,
            d: 1,
            q_max: 1,
            ..OrderSearch::default()
        };
        for model in [ModelKind::Lstm, ModelKind::LstmArima] {
            let p = run_hybrid_walk(&walk, &s, model, &search, &params(), &settings(), 3).unwrap();
            assert_eq!(p.predicted_close.len(), walk.test.len());
            assert_eq!(p.dates.len(), walk.test.len());
            assert!(p.predicted_close.iter().all(|v| v.is_finite()));
        }
        let (p, _) = run_arima_walk(&walk, &s, &search).unwrap();
        assert_eq!(p.predicted_close.len(), walk.test.len());
    }

    #[test]
    fn zero_residual_column_reproduces_plain_lstm() {
        let s = synthetic(170, |i| 1000.0 + (i % 5) as f64);
        let walk = small_walk();
        let plain = prepare_with_residuals(&walk, &s, None, None).unwrap();
        let zeros = vec![0.0; s.len()];
        let hybrid = prepare_with_residuals(&walk, &s, Some(&zeros), None).unwrap();
        let a = train_lstm_walk(&walk, &plain, &params(), &settings(), 11).unwrap();
        let b = train_lstm_walk(&walk, &hybrid, &params(), &settings(), 11).unwrap();
        assert_eq!(a.test_predictions, b.test_predictions);
        assert_eq!(a.valid_loss, b.valid_loss);
    }

    #[test]
    fn scalers_must_come_from_training_rows() {
        let s = synthetic(170, |_| 1.0);
        let walk = small_walk();
        let mut prepared = prepare_with_residuals(&walk, &s, None, None).unwrap();
        prepared.features.fit_range = 0..150;
        assert!(train_lstm_walk(&walk, &prepared, &params(), &settings(), 1).is_err());
    }
}
