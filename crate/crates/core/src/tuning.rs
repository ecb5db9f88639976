//! Random hyperparameter search per walk and selection of the deployed
//! trial.
//!
//! Selection: among the five trials with the lowest validation loss, keep
//! those whose validation IR** is non-zero and deploy the one whose train
//! and validation IR** are closest. If all of them have zero validation
//! IR**, the lowest-loss trial is deployed and the fallback is flagged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{equity_curve, SignalSeries, StrategyMode};
use crate::error::{Error, Result};
use crate::hybrid::{train_lstm_walk, LstmWalkOutput, PreparedWalk, TrainSettings};
use crate::lstm::OptimizerKind;
use crate::market_data::PriceSeries;
use crate::metrics::{compute_all, MetricsConfig};
use crate::walkforward::Walk;

/// Size of the low-loss pool considered by [`select_best`].
pub const TOP_POOL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub neurons: usize,
    pub layers: usize,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            neurons: 50,
            layers: 1,
            dropout: 0.075,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 32,
            seq_len: 14,
        }
    }
}

/// Candidate values per hyperparameter; the search space is their
/// Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub neurons: Vec<usize>,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
    pub optimizer: Vec<OptimizerKind>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub seq_len: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            neurons: vec![25, 50, 75, 100, 250, 500],
            layers: vec![1, 2],
            dropout: vec![0.075],
            optimizer: vec![OptimizerKind::Adam, OptimizerKind::Nadam, OptimizerKind::Adagrad],
            learning_rate: vec![0.01, 0.0001],
            batch_size: vec![32],
            seq_len: vec![7, 14, 21],
        }
    }
}

impl SearchSpace {
    fn radices(&self) -> [usize; 7] {
        [
            self.neurons.len(),
            self.layers.len(),
            self.dropout.len(),
            self.optimizer.len(),
            self.learning_rate.len(),
            self.batch_size.len(),
            self.seq_len.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    /// The `index`-th combination in mixed-radix order (last field fastest).
    pub fn point(&self, mut index: usize) -> HyperParams {
        let r = self.radices();
        let mut digit = [0usize; 7];
        for k in (0..7).rev() {
            digit[k] = index % r[k];
            index /= r[k];
        }
        HyperParams {
            neurons: self.neurons[digit[0]],
            layers: self.layers[digit[1]],
            dropout: self.dropout[digit[2]],
            optimizer: self.optimizer[digit[3]],
            learning_rate: self.learning_rate[digit[4]],
            batch_size: self.batch_size[digit[5]],
            seq_len: self.seq_len[digit[6]],
        }
    }
}

/// `n_trials` combinations drawn without replacement; when the space is
/// smaller, every combination once and the remainder with replacement.
pub fn sample_trials(space: &SearchSpace, n_trials: usize, seed: u64) -> Result<Vec<HyperParams>> {
    let size = space.size();
    if size == 0 {
        return Err(Error::InvalidConfig("empty hyperparameter space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..size).collect();
    if size >= n_trials {
        let (picked, _) = indices.partial_shuffle(&mut rng, n_trials);
        Ok(picked.iter().map(|i| space.point(*i)).collect())
    } else {
        indices.shuffle(&mut rng);
        let mut out: Vec<HyperParams> = indices.iter().map(|i| space.point(*i)).collect();
        while out.len() < n_trials {
            out.push(space.point(rng.random_range(0..size)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: HyperParams,
    /// NaN when the trial failed (stored as `null`).
    #[serde(with = "nan_as_null")]
    pub valid_loss: f64,
    pub ir2_train: f64,
    pub ir2_valid: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub error: Option<String>,
    /// Test-range forecasts in price units from the trained network.
    #[serde(skip)]
    pub test_predictions: Vec<f64>,
}

impl TrialRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none() && self.valid_loss.is_finite()
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the input list.
    pub index: usize,
    /// Every pooled trial had zero validation IR**.
    pub fallback: bool,
}

/// Applies the selection rule. Ties in loss are broken by trial number;
/// ties in `|ir2_train - ir2_valid|` by pool rank.
pub fn select_best(trials: &[TrialRecord]) -> Result<Selection> {
    let mut pool: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].completed()).collect();
    if pool.is_empty() {
        return Err(Error::NoCompletedTrials);
    }
    pool.sort_by(|&a, &b| {
        trials[a]
            .valid_loss
            .total_cmp(&trials[b].valid_loss)
            .then(trials[a].trial.cmp(&trials[b].trial))
    });
    pool.truncate(TOP_POOL);
    let gap = |i: usize| (trials[i].ir2_train - trials[i].ir2_valid).abs();
    let mut best: Option<usize> = None;
    for &i in &pool {
        if trials[i].ir2_valid == 0.0 {
            continue;
        }
        if best.is_none_or(|b| gap(i) < gap(b)) {
            best = Some(i);
        }
    }
    Ok(match best {
        Some(index) => Selection { index, fallback: false },
        None => Selection {
            index: pool[0],
            fallback: true,
        },
    })
}

/// IR** of trading `predictions` where `predictions[k]` forecasts
/// `closes[first_target + k]` from data up to the day before. Zero when
/// the range is too short to measure.
pub fn strategy_ir2(
    series: &PriceSeries,
    predictions: &[f64],
    first_target: usize,
    mode: StrategyMode,
    cost_rate: f64,
) -> Result<f64> {
    if first_target == 0 {
        return Err(Error::ShapeMismatch("first target needs a prior close".into()));
    }
    let n = predictions.len();
    let closes = series.closes();
    let dates = series.dates();
    if first_target + n > closes.len() {
        return Err(Error::ShapeMismatch("predictions run past the series".into()));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let range = first_target - 1..first_target + n;
    let decision_closes = &closes[first_target - 1..first_target - 1 + n];
    let positions = crate::backtest::signals(predictions, decision_closes, mode)?;
    let signals = SignalSeries::new(dates[first_target - 1..first_target - 1 + n].to_vec(), positions, mode)?;
    let curve = equity_curve(&signals, &closes[range.clone()], &dates[range], cost_rate)?;
    Ok(compute_all(&curve, MetricsConfig::default())?.ir_double_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub n_trials: usize,
    pub space: SearchSpace,
    pub settings: TrainSettings,
    pub mode: StrategyMode,
    pub cost_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TuningOutcome {
    pub records: Vec<TrialRecord>,
    pub selection: Selection,
}

impl TuningOutcome {
    pub fn best(&self) -> &TrialRecord {
        &self.records[self.selection.index]
    }
}

/// Trains every sampled trial on the walk and selects one. Trial `k` uses
/// seed `walk_seed ^ k`.
pub fn tune_walk(
    walk: &Walk,
    series: &PriceSeries,
    prepared: &PreparedWalk,
    config: &TuningConfig,
    walk_seed: u64,
) -> Result<TuningOutcome> {
    let mut out = tune_walk_modes(walk, series, prepared, config, &[config.mode], walk_seed)?;
    out.pop().ok_or(Error::NoCompletedTrials)
}

/// As [`tune_walk`], scoring the same trained trials under each of `modes`
/// (which replaces `config.mode`). Outcomes follow the order of `modes`.
pub fn tune_walk_modes(
    walk: &Walk,
    series: &PriceSeries,
    prepared: &PreparedWalk,
    config: &TuningConfig,
    modes: &[StrategyMode],
    walk_seed: u64,
) -> Result<Vec<TuningOutcome>> {
    let trials = sample_trials(&config.space, config.n_trials, walk_seed)?;
    let per_trial: Vec<Vec<TrialRecord>> = trials
        .into_par_iter()
        .enumerate()
        .map(|(trial, params)| {
            let seed = walk_seed ^ trial as u64;
            let record = |valid_loss: f64, ir2: (f64, f64), out: Option<&LstmWalkOutput>, error: Option<String>| TrialRecord {
                trial,
                params: params.clone(),
                valid_loss,
                ir2_train: ir2.0,
                ir2_valid: ir2.1,
                seed,
                best_epoch: out.map_or(0, |o| o.best_epoch),
                epochs_run: out.map_or(0, |o| o.epochs_run),
                error,
                test_predictions: out.map(|o| o.test_predictions.clone()).unwrap_or_default(),
            };
            let run = || -> Result<Vec<TrialRecord>> {
                let out = train_lstm_walk(walk, prepared, &params, &config.settings, seed)?;
                modes
                    .iter()
                    .map(|&mode| {
                        let ir2_train =
                            strategy_ir2(series, &out.train_predictions, out.train_first_target, mode, config.cost_rate)?;
                        let ir2_valid = strategy_ir2(series, &out.valid_predictions, walk.valid.start, mode, config.cost_rate)?;
                        Ok(record(out.valid_loss, (ir2_train, ir2_valid), Some(&out), None))
                    })
                    .collect()
            };
            run().unwrap_or_else(|err| {
                log::warn!("walk {} trial {trial} failed: {err}", walk.walk_index);
                modes
                    .iter()
                    .map(|_| record(f64::NAN, (0.0, 0.0), None, Some(err.to_string())))
                    .collect()
            })
        })
        .collect();
    (0..modes.len())
        .map(|m| {
            let records: Vec<TrialRecord> = per_trial.iter().map(|r| r[m].clone()).collect();
            let selection = select_best(&records)?;
            Ok(TuningOutcome { records, selection })
        })
        .collect()
}

/// Writes the trial ledger
/// `walk,trial,neurons,layers,dropout,optimizer,lr,batch,seq_len,valid_loss,ir2_train,ir2_valid,selected`.
pub fn write_trials_csv<W: std::io::Write>(writer: W, walks: &[(usize, &TuningOutcome)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "walk",
        "trial",
        "neurons",
        "layers",
        "dropout",
        "optimizer",
        "lr",
        "batch",
        "seq_len",
        "valid_loss",
        "ir2_train",
        "ir2_valid",
        "selected",
    ])?;
    for (walk, outcome) in walks {
        for (i, r) in outcome.records.iter().enumerate() {
            let p = &r.params;
            w.write_record([
                walk.to_string(),
                r.trial.to_string(),
                p.neurons.to_string(),
                p.layers.to_string(),
                p.dropout.to_string(),
                p.optimizer.to_string(),
                p.learning_rate.to_string(),
                p.batch_size.to_string(),
                p.seq_len.to_string(),
                r.valid_loss.to_string(),
                r.ir2_train.to_string(),
                r.ir2_valid.to_string(),
                u8::from(i == outcome.selection.index).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
