//! Run orchestration and the on-disk run artifact.
//!
//! A run lives in `<root>/<run_hash>/`:
//!
//! ```text
//! config.json                     canonical configuration (data paths blanked)
//! inputs.json                     data paths and ingest reports (not hashed)
//! plans/<label>.csv               walk ranges
//! walks/<label>/<model>[/<mode>]/walk_NNN.json
//! predictions/<label>/<model>_<mode>.csv
//! trials/<label>/<model>_<mode>.csv
//! equity/<label>/<model>_<mode>.csv, equity/<label>/buy_and_hold.csv
//! reports/<label>/{metrics,paired,ols,plot}_<mode>.csv
//! manifest.json
//! run.log                         per-walk timing (not hashed)
//! artifact_hash.txt               present once the run is complete
//! ```
//!
//! `<label>` is also `ensemble` when more than one index is configured.
//! Walk files are written once and reused, so an interrupted run resumes
//! from the walks it finished.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{buy_and_hold, equity_curve, signals_with_gaps, EquityCurve, SignalSeries, StrategyMode};
use crate::config::{IndexSpec, RunConfig, SensitivityOverrides, SENSITIVITY_BATCH, SENSITIVITY_DROPOUT, SENSITIVITY_MAX_ORDER};
use crate::ensemble::equal_weight;
use crate::error::{Error, Result};
use crate::hybrid::{prepare_walk, run_arima_walk, to_walk_prediction, ArimaSummary, ModelKind};
use crate::market_data::{descriptive_stats, ingest_csv, DescriptiveStats, IngestReport, PriceSeries};
use crate::metrics::{compute_all, write_metrics_csv, MetricsConfig, PerfMetrics, METRIC_COLUMNS};
use crate::stats::{ols_alpha, paired_t_test, write_ols_csv, write_paired_csv};
use crate::tuning::{tune_walk_modes, write_trials_csv, Selection, TrialRecord, TuningConfig, TuningOutcome};
use crate::walkforward::{plan_walks, stitch, write_predictions_csv, PredictionRow, StitchedPredictions, WalkOutcome, WalkPlan};

pub const ENSEMBLE_LABEL: &str = "ensemble";
pub const BENCHMARK_LABEL: &str = "Buy&Hold";
pub const ARTIFACT_HASH_FILE: &str = "artifact_hash.txt";
const LOG_FILE: &str = "run.log";
const INPUTS_FILE: &str = "inputs.json";
const UNHASHED: [&str; 3] = [LOG_FILE, INPUTS_FILE, ARTIFACT_HASH_FILE];

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub artifact_root: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Stop after computing this many walk units (interruption testing).
    pub stop_after_walks: Option<usize>,
}

impl RunOptions {
    pub fn new(artifact_root: impl Into<PathBuf>) -> Self {
        Self {
            artifact_root: artifact_root.into(),
            jobs: 0,
            stop_after_walks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedWalk {
    pub label: String,
    pub model: ModelKind,
    pub mode: Option<StrategyMode>,
    pub walk_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub run_hash: String,
    /// `None` when the run stopped before completion.
    pub artifact_hash: Option<String>,
    pub computed_units: usize,
    pub reused_units: usize,
    pub failed_walks: Vec<FailedWalk>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.artifact_hash.is_some()
    }
}

/// Persisted result of one walk of one model (and, for LSTM models, one
/// strategy mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub label: String,
    pub model: ModelKind,
    pub mode: Option<StrategyMode>,
    pub outcome: WalkOutcome,
    pub arima: Option<ArimaSummary>,
    pub trials: Vec<TrialRecord>,
    pub selection: Option<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_hash: String,
    pub labels: Vec<String>,
    pub ensemble: bool,
    pub models: Vec<ModelKind>,
    pub modes: Vec<StrategyMode>,
    pub walks: BTreeMap<String, usize>,
    pub oos_days: BTreeMap<String, usize>,
    pub failed_walks: Vec<FailedWalk>,
}

impl Manifest {
    /// Index labels followed by the ensemble label when one was built.
    pub fn report_labels(&self) -> Vec<String> {
        let mut out = self.labels.clone();
        if self.ensemble {
            out.push(ENSEMBLE_LABEL.into());
        }
        out
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(
        ".{name}.tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_with<F: FnOnce(&mut Vec<u8>) -> Result<()>>(path: &Path, f: F) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

fn curve_name(model: ModelKind, mode: StrategyMode) -> String {
    format!("{}_{}", model.slug(), mode.slug())
}

pub fn walk_record_path(run_dir: &Path, label: &str, model: ModelKind, mode: Option<StrategyMode>, walk: usize) -> PathBuf {
    let mut p = run_dir.join("walks").join(label).join(model.slug());
    if let Some(m) = mode {
        p.push(m.slug());
    }
    p.join(format!("walk_{walk:03}.json"))
}

pub fn equity_path(run_dir: &Path, label: &str, model: ModelKind, mode: StrategyMode) -> PathBuf {
    run_dir.join("equity").join(label).join(format!("{}.csv", curve_name(model, mode)))
}

pub fn benchmark_path(run_dir: &Path, label: &str) -> PathBuf {
    run_dir.join("equity").join(label).join("buy_and_hold.csv")
}

pub fn report_dir(run_dir: &Path, label: &str) -> PathBuf {
    run_dir.join("reports").join(label)
}

/// Digest of every hashed file under `run_dir`, in path order.
pub fn artifact_hash(run_dir: &Path) -> Result<String> {
    fn collect(dir: &Path, base: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.starts_with('.') {
                continue;
            }
            if path.is_dir() {
                collect(&path, base, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("under base");
                let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                let rel = rel.join("/");
                if !UNHASHED.contains(&rel.as_str()) {
                    out.push((rel, path));
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(run_dir, run_dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path)?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn canonical(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    for idx in &mut c.indices {
        idx.path = PathBuf::new();
    }
    c
}

struct IndexData {
    label: String,
    series: PriceSeries,
    plan: WalkPlan,
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    index: usize,
    model: ModelKind,
    walk: usize,
}

struct Context<'a> {
    run_dir: &'a Path,
    config: &'a RunConfig,
    data: &'a [IndexData],
    log: Mutex<fs::File>,
}

impl Context<'_> {
    fn record_paths(&self, unit: Unit) -> Vec<PathBuf> {
        let label = &self.data[unit.index].label;
        if unit.model.uses_lstm() {
            self.config
                .modes
                .iter()
                .map(|m| walk_record_path(self.run_dir, label, unit.model, Some(*m), unit.walk))
                .collect()
        } else {
            vec![walk_record_path(self.run_dir, label, unit.model, None, unit.walk)]
        }
    }

    fn log_line(&self, line: &str) {
        log::info!("{line}");
        if let Ok(mut f) = self.log.lock() {
            let _ = writeln!(f, "{line}");
        }
    }

    fn run_unit(&self, unit: Unit) -> Result<()> {
        let started = Instant::now();
        let d = &self.data[unit.index];
        let walk = &d.plan.walks[unit.walk];
        let (space, search) = self.config.effective();
        let failed = |reason: String| WalkOutcome::Failed {
            walk_index: walk.walk_index,
            reason,
        };
        let base = |mode, outcome| WalkRecord {
            label: d.label.clone(),
            model: unit.model,
            mode,
            outcome,
            arima: None,
            trials: Vec::new(),
            selection: None,
        };
        let mut status = "ok".to_string();
        if unit.model.uses_lstm() {
            let modes = &self.config.modes;
            let tuning = TuningConfig {
                n_trials: self.config.tuning.n_trials,
                space,
                settings: self.config.tuning.train.clone(),
                mode: modes[0],
                cost_rate: self.config.cost_rate,
            };
            let walk_seed = self.config.seed ^ walk.walk_index as u64;
            let result = prepare_walk(walk, &d.series, unit.model, &search)
                .and_then(|prep| Ok((prep.arima.clone(), tune_walk_modes(walk, &d.series, &prep, &tuning, modes, walk_seed)?)));
            for (k, mode) in modes.iter().enumerate() {
                let record = match &result {
                    Ok((arima, outcomes)) => {
                        let out = &outcomes[k];
                        let prediction = to_walk_prediction(walk, &d.series, unit.model, out.best().test_predictions.clone());
                        WalkRecord {
                            arima: arima.clone(),
                            trials: out.records.clone(),
                            selection: Some(out.selection),
                            ..base(Some(*mode), WalkOutcome::Completed(prediction))
                        }
                    }
                    Err(e) => {
                        status = format!("failed: {e}");
                        base(Some(*mode), failed(e.to_string()))
                    }
                };
                write_json(&walk_record_path(self.run_dir, &d.label, unit.model, Some(*mode), unit.walk), &record)?;
            }
        } else {
            let record = match run_arima_walk(walk, &d.series, &search) {
                Ok((prediction, summary)) => WalkRecord {
                    arima: Some(summary),
                    ..base(None, WalkOutcome::Completed(prediction))
                },
                Err(e) => {
                    status = format!("failed: {e}");
                    base(None, failed(e.to_string()))
                }
            };
            write_json(&walk_record_path(self.run_dir, &d.label, unit.model, None, unit.walk), &record)?;
        }
        self.log_line(&format!(
            "{} {} walk {}: {:.2} s, {status}",
            d.label,
            unit.model,
            walk.walk_index,
            started.elapsed().as_secs_f64()
        ));
        Ok(())
    }
}

/// Executes (or resumes) the configured run.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let run_hash = config.run_hash()?;
    let run_dir = options.artifact_root.join(&run_hash);
    fs::create_dir_all(&run_dir)?;

    let mut data = Vec::new();
    let mut inputs = BTreeMap::new();
    for spec in &config.indices {
        let (series, report) = ingest_csv(&spec.path, &spec.schema)?;
        let plan = plan_walks(series.len(), config.walk)?;
        inputs.insert(spec.label.clone(), (spec.path.clone(), report));
        data.push(IndexData {
            label: spec.label.clone(),
            series,
            plan,
        });
    }
    write_json(&run_dir.join("config.json"), &canonical(config))?;
    write_json(&run_dir.join(INPUTS_FILE), &inputs)?;
    for d in &data {
        write_with(&run_dir.join("plans").join(format!("{}.csv", d.label)), |b| d.plan.write_csv(b))?;
    }

    let log = fs::OpenOptions::new().create(true).append(true).open(run_dir.join(LOG_FILE))?;
    let ctx = Context {
        run_dir: &run_dir,
        config,
        data: &data,
        log: Mutex::new(log),
    };
    let mut units = Vec::new();
    for (index, d) in data.iter().enumerate() {
        for &model in &config.models {
            for walk in 0..d.plan.walks.len() {
                units.push(Unit { index, model, walk });
            }
        }
    }
    let total = units.len();
    let mut pending: Vec<Unit> = units
        .into_iter()
        .filter(|u| ctx.record_paths(*u).iter().any(|p| !p.exists()))
        .collect();
    let reused_units = total - pending.len();
    let interrupted = options.stop_after_walks.is_some_and(|k| k < pending.len());
    if let Some(k) = options.stop_after_walks {
        pending.truncate(k);
    }
    ctx.log_line(&format!("run {run_hash}: {total} walk units, {reused_units} reused, {} to compute", pending.len()));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| pending.par_iter().try_for_each(|u| ctx.run_unit(*u)))?;
    let computed_units = pending.len();

    if interrupted {
        return Ok(RunSummary {
            run_dir,
            run_hash,
            artifact_hash: None,
            computed_units,
            reused_units,
            failed_walks: Vec::new(),
        });
    }

    let manifest = assemble(&run_dir, &run_hash, config, &data)?;
    write_reports(&run_dir, &report_dir_root(&run_dir), config, &manifest)?;
    let hash = artifact_hash(&run_dir)?;
    write_atomic(&run_dir.join(ARTIFACT_HASH_FILE), format!("{hash}\n").as_bytes())?;
    ctx.log_line(&format!("run {run_hash}: complete, artifact {hash}"));
    Ok(RunSummary {
        run_dir,
        run_hash,
        artifact_hash: Some(hash),
        computed_units,
        reused_units,
        failed_walks: manifest.failed_walks,
    })
}

fn report_dir_root(run_dir: &Path) -> PathBuf {
    run_dir.join("reports")
}

/// Stitches walk records into predictions, trial ledgers and equity
/// curves, and builds the ensemble.
fn assemble(run_dir: &Path, run_hash: &str, config: &RunConfig, data: &[IndexData]) -> Result<Manifest> {
    let mut failed_walks = Vec::new();
    let mut walks = BTreeMap::new();
    let mut oos_days = BTreeMap::new();
    for d in data {
        let closes = d.series.closes();
        let dates = d.series.dates();
        let oos = d.plan.oos_range();
        walks.insert(d.label.clone(), d.plan.walks.len());
        oos_days.insert(d.label.clone(), oos.len());
        let bh = buy_and_hold(&closes[oos.start - 1..oos.end], &dates[oos.start - 1..oos.end], config.cost_rate)?;
        write_with(&benchmark_path(run_dir, &d.label), |b| bh.write_csv(b))?;

        for &model in &config.models {
            for &mode in &config.modes {
                let record_mode = model.uses_lstm().then_some(mode);
                let mut records = Vec::with_capacity(d.plan.walks.len());
                for w in &d.plan.walks {
                    let path = walk_record_path(run_dir, &d.label, model, record_mode, w.walk_index);
                    let record: WalkRecord = read_json(&path)
                        .map_err(|e| Error::IncompleteArtifact(format!("{}: {e}", path.display())))?;
                    if let WalkOutcome::Failed { walk_index, reason } = &record.outcome {
                        let entry = FailedWalk {
                            label: d.label.clone(),
                            model,
                            mode: record_mode,
                            walk_index: *walk_index,
                            reason: reason.clone(),
                        };
                        if !failed_walks.contains(&entry) {
                            failed_walks.push(entry);
                        }
                    }
                    records.push(record);
                }
                let outcomes: Vec<WalkOutcome> = records.iter().map(|r| r.outcome.clone()).collect();
                let stitched = stitch(&outcomes, &d.plan)?;
                let name = curve_name(model, mode);

                let rows = prediction_rows(&stitched, &d.plan, &closes, &dates, model);
                write_with(&run_dir.join("predictions").join(&d.label).join(format!("{name}.csv")), |b| {
                    write_predictions_csv(b, &rows)
                })?;

                if model.uses_lstm() {
                    let tuned: Vec<(usize, TuningOutcome)> = records
                        .iter()
                        .filter_map(|r| {
                            r.selection.map(|selection| {
                                (
                                    r.outcome.walk_index(),
                                    TuningOutcome {
                                        records: r.trials.clone(),
                                        selection,
                                    },
                                )
                            })
                        })
                        .collect();
                    let refs: Vec<(usize, &TuningOutcome)> = tuned.iter().map(|(w, o)| (*w, o)).collect();
                    write_with(&run_dir.join("trials").join(&d.label).join(format!("{name}.csv")), |b| {
                        write_trials_csv(b, &refs)
                    })?;
                }

                let curve = strategy_curve(&stitched, &closes, &dates, mode, config.cost_rate)?;
                write_with(&equity_path(run_dir, &d.label, model, mode), |b| curve.write_csv(b))?;
            }
        }
    }

    let mut ensemble = false;
    if data.len() > 1 {
        let labels: Vec<&str> = data.iter().map(|d| d.label.as_str()).collect();
        let read_all = |path_of: &dyn Fn(&str) -> PathBuf| -> Result<Vec<(String, EquityCurve)>> {
            labels.iter().map(|l| Ok((l.to_string(), read_curve(&path_of(l))?))).collect()
        };
        let built = (|| -> Result<()> {
            let (curve, _) = equal_weight(&read_all(&|l| benchmark_path(run_dir, l))?, MetricsConfig::default())?;
            write_with(&benchmark_path(run_dir, ENSEMBLE_LABEL), |b| curve.write_csv(b))?;
            for &model in &config.models {
                for &mode in &config.modes {
                    let comps = read_all(&|l| equity_path(run_dir, l, model, mode))?;
                    let (curve, _) = equal_weight(&comps, MetricsConfig::default())?;
                    write_with(&equity_path(run_dir, ENSEMBLE_LABEL, model, mode), |b| curve.write_csv(b))?;
                }
            }
            Ok(())
        })();
        match built {
            Ok(()) => ensemble = true,
            Err(Error::NoCommonStart) => log::warn!("indices share no common window; ensemble skipped"),
            Err(e) => return Err(e),
        }
    }

    let manifest = Manifest {
        run_hash: run_hash.to_string(),
        labels: data.iter().map(|d| d.label.clone()).collect(),
        ensemble,
        models: config.models.clone(),
        modes: config.modes.clone(),
        walks,
        oos_days,
        failed_walks,
    };
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn prediction_rows(
    stitched: &StitchedPredictions,
    plan: &WalkPlan,
    closes: &[f64],
    dates: &[NaiveDate],
    model: ModelKind,
) -> Vec<PredictionRow> {
    stitched
        .range()
        .zip(&stitched.predicted)
        .map(|(t, p)| PredictionRow {
            date: dates[t],
            actual_close: closes[t],
            predicted_close: *p,
            model: model.to_string(),
            walk_index: plan.walks.iter().find(|w| w.test.contains(&t)).map_or(0, |w| w.walk_index),
        })
        .collect()
}

/// Trades the stitched forecasts: the position for day `t` is decided at
/// the close of `t - 1`. Gaps hold flat.
pub fn strategy_curve(
    stitched: &StitchedPredictions,
    closes: &[f64],
    dates: &[NaiveDate],
    mode: StrategyMode,
    cost_rate: f64,
) -> Result<EquityCurve> {
    let r = stitched.range();
    if r.start == 0 || r.end > closes.len() || r.end > dates.len() {
        return Err(Error::ShapeMismatch(format!("out-of-sample range {r:?} for {} closes", closes.len())));
    }
    let positions = signals_with_gaps(&stitched.predicted, &closes[r.start - 1..r.end - 1], mode)?;
    let signals = SignalSeries::new(dates[r.start - 1..r.end - 1].to_vec(), positions, mode)?;
    equity_curve(&signals, &closes[r.start - 1..r.end], &dates[r.start - 1..r.end], cost_rate)
}

fn read_curve(path: &Path) -> Result<EquityCurve> {
    let file = fs::File::open(path).map_err(|e| Error::IncompleteArtifact(format!("{}: {e}", path.display())))?;
    EquityCurve::read_csv(file)
}

/// A strategy row of a report table with its curve as persisted.
struct Row {
    name: String,
    curve: EquityCurve,
    metrics: PerfMetrics,
}

fn load_rows(run_dir: &Path, label: &str, models: &[ModelKind], mode: StrategyMode) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for &model in models {
        let curve = read_curve(&equity_path(run_dir, label, model, mode))?;
        let metrics = compute_all(&curve, MetricsConfig::default())?;
        rows.push(Row {
            name: model.to_string(),
            curve,
            metrics,
        });
    }
    let curve = read_curve(&benchmark_path(run_dir, label))?;
    let metrics = compute_all(&curve, MetricsConfig::default())?;
    rows.push(Row {
        name: BENCHMARK_LABEL.into(),
        curve,
        metrics,
    });
    Ok(rows)
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes `strategy,ARC,ASD,MD,MLD,IR*,IR**,best`; `best` is 1 on the
/// first row with the highest IR**.
pub fn write_metrics_table<W: Write>(writer: W, rows: &[(String, PerfMetrics)]) -> Result<()> {
    let best = rows
        .iter()
        .enumerate()
        .fold(None, |acc: Option<usize>, (i, (_, m))| match acc {
            Some(b) if rows[b].1.ir_double_star >= m.ir_double_star => Some(b),
            _ => Some(i),
        });
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["strategy"];
    header.extend(METRIC_COLUMNS);
    header.push("best");
    w.write_record(&header)?;
    for (i, (name, m)) in rows.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(m.values().map(fmt6));
        rec.push(u8::from(best == Some(i)).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `date,<strategy>...,Buy&Hold` equity values, one row per
/// out-of-sample day.
fn write_plot_csv<W: Write>(writer: W, rows: &[Row]) -> Result<()> {
    let dates = &rows[0].curve.dates;
    if rows.iter().any(|r| r.curve.dates != *dates) {
        return Err(Error::AlignmentError("strategy curves cover different dates".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(rows.iter().map(|r| r.name.clone()));
    w.write_record(&header)?;
    for k in 1..dates.len() {
        let mut rec = vec![dates[k].to_string()];
        rec.extend(rows.iter().map(|r| r.curve.values[k].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_reports(run_dir: &Path, out_root: &Path, config: &RunConfig, manifest: &Manifest) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for label in manifest.report_labels() {
        let dir = out_root.join(&label);
        for &mode in &config.modes {
            let rows = load_rows(run_dir, &label, &config.models, mode)?;
            let table: Vec<(String, PerfMetrics)> = rows.iter().map(|r| (r.name.clone(), r.metrics)).collect();
            let path = dir.join(format!("metrics_{}.csv", mode.slug()));
            write_with(&path, |b| write_metrics_table(b, &table))?;
            written.push(path);

            let bench = &rows[rows.len() - 1].curve.strategy_returns;
            let mut paired = Vec::new();
            let mut ols = Vec::new();
            for r in &rows[..rows.len() - 1] {
                match paired_t_test(&r.curve.strategy_returns, bench) {
                    Ok(t) => paired.push((r.name.clone(), t)),
                    Err(e) => log::warn!("{label} {mode} {}: paired test skipped: {e}", r.name),
                }
                match ols_alpha(&r.curve.strategy_returns, bench) {
                    Ok(o) => ols.push((r.name.clone(), o)),
                    Err(e) => log::warn!("{label} {mode} {}: regression skipped: {e}", r.name),
                }
            }
            let path = dir.join(format!("paired_{}.csv", mode.slug()));
            write_with(&path, |b| write_paired_csv(b, &paired))?;
            written.push(path);
            let path = dir.join(format!("ols_{}.csv", mode.slug()));
            write_with(&path, |b| write_ols_csv(b, &ols))?;
            written.push(path);
            let path = dir.join(format!("plot_{}.csv", mode.slug()));
            write_with(&path, |b| write_plot_csv(b, &rows))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Regenerates report tables of a completed run into `out_dir` (default:
/// the run's own `reports/`).
pub fn report(run_dir: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::IncompleteArtifact(format!("{} has no manifest", run_dir.display())));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let config: RunConfig = read_json(&run_dir.join("config.json"))?;
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| report_dir_root(run_dir));
    write_reports(run_dir, &out, &config, &manifest)
}

/// Metrics of one persisted strategy curve.
pub fn load_metrics(run_dir: &Path, label: &str, model: ModelKind, mode: StrategyMode) -> Result<PerfMetrics> {
    compute_all(&read_curve(&equity_path(run_dir, label, model, mode))?, MetricsConfig::default())
}

/// Single-parameter deviations from `base`, each restricted to the models
/// it affects.
pub fn sensitivity_scenarios(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    let with = |models: Vec<ModelKind>, overrides: SensitivityOverrides| {
        let mut c = base.clone();
        c.models = models;
        c.sensitivity = overrides;
        c
    };
    if base.models.contains(&ModelKind::Arima) {
        out.push(with(
            vec![ModelKind::Arima],
            SensitivityOverrides {
                arima_max_order: Some(SENSITIVITY_MAX_ORDER),
                ..Default::default()
            },
        ));
        out.push(with(
            vec![ModelKind::Arima],
            SensitivityOverrides {
                criterion: Some(crate::arima::Criterion::Bic),
                ..Default::default()
            },
        ));
    }
    let lstm: Vec<ModelKind> = base.models.iter().copied().filter(|m| m.uses_lstm()).collect();
    if !lstm.is_empty() {
        for d in SENSITIVITY_DROPOUT {
            out.push(with(
                lstm.clone(),
                SensitivityOverrides {
                    dropout: Some(d),
                    ..Default::default()
                },
            ));
        }
        for b in SENSITIVITY_BATCH {
            out.push(with(
                lstm.clone(),
                SensitivityOverrides {
                    batch_size: Some(b),
                    ..Default::default()
                },
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SensitivityOutcome {
    pub base_hash: String,
    pub runs: Vec<(String, RunSummary)>,
    pub table_dir: PathBuf,
    pub tables: Vec<PathBuf>,
}

/// Column-wise best rows: highest ARC, IR*, IR**; lowest ASD, MD, MLD.
pub fn best_columns(rows: &[[f64; 6]]) -> Vec<Vec<&'static str>> {
    let higher = [true, false, false, false, true, true];
    let mut out = vec![Vec::new(); rows.len()];
    for (c, name) in METRIC_COLUMNS.iter().enumerate() {
        let key = |r: &[f64; 6]| if higher[c] { r[c] } else { -r[c] };
        let Some(best) = rows.iter().map(key).reduce(f64::max) else {
            continue;
        };
        for (i, r) in rows.iter().enumerate() {
            if key(r) == best {
                out[i].push(*name);
            }
        }
    }
    out
}

/// Writes `scenario,ARC,ASD,MD,MLD,IR*,IR**,best` with best-valued
/// columns listed per row (`;`-separated). Values are compared as printed.
pub fn write_comparison_table<W: Write>(writer: W, rows: &[(String, PerfMetrics)]) -> Result<()> {
    let printed: Vec<[f64; 6]> = rows
        .iter()
        .map(|(_, m)| m.values().map(|v| fmt6(v).parse().unwrap_or(v)))
        .collect();
    let best = best_columns(&printed);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["scenario"];
    header.extend(METRIC_COLUMNS);
    header.push("best");
    w.write_record(&header)?;
    for (i, (name, m)) in rows.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(m.values().map(fmt6));
        rec.push(best[i].join(";"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every sensitivity scenario of a completed base run and writes
/// comparison tables to `<root>/sensitivity_<base_hash>/`.
pub fn sensitivity(base: &RunConfig, options: &RunOptions) -> Result<SensitivityOutcome> {
    base.validate()?;
    if !base.sensitivity.is_empty() {
        return Err(Error::InvalidConfig("the base configuration must not carry overrides".into()));
    }
    let base_hash = base.run_hash()?;
    let base_dir = options.artifact_root.join(&base_hash);
    if !base_dir.join(ARTIFACT_HASH_FILE).exists() {
        return Err(Error::IncompleteArtifact(format!("base run {base_hash} not found; run it first")));
    }
    let manifest: Manifest = read_json(&base_dir.join("manifest.json"))?;
    let opts = RunOptions {
        stop_after_walks: None,
        ..options.clone()
    };
    let mut runs = Vec::new();
    for cfg in sensitivity_scenarios(base) {
        let summary = run(&cfg, &opts)?;
        runs.push((cfg.sensitivity.describe(), summary, cfg.models.clone()));
    }
    let table_dir = options.artifact_root.join(format!("sensitivity_{base_hash}"));
    let mut tables = Vec::new();
    for label in manifest.report_labels() {
        for &model in &base.models {
            for &mode in &base.modes {
                let mut rows = vec![("base".to_string(), load_metrics(&base_dir, &label, model, mode)?)];
                for (name, summary, models) in &runs {
                    if models.contains(&model) {
                        rows.push((name.clone(), load_metrics(&summary.run_dir, &label, model, mode)?));
                    }
                }
                let path = table_dir.join(&label).join(format!("{}.csv", curve_name(model, mode)));
                write_with(&path, |b| write_comparison_table(b, &rows))?;
                tables.push(path);
            }
        }
    }
    Ok(SensitivityOutcome {
        base_hash,
        runs: runs.into_iter().map(|(n, s, _)| (n, s)).collect(),
        table_dir,
        tables,
    })
}

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub label: String,
    pub report: IngestReport,
    pub stats: DescriptiveStats,
    pub canonical_path: PathBuf,
}

/// Validates each input, writes `<label>.csv` in canonical form and
/// `descriptive_stats.csv` (`index,count,mean,std,min,25%,50%,75%,max`).
pub fn ingest(specs: &[IndexSpec], out_dir: &Path) -> Result<Vec<IngestSummary>> {
    let mut out = Vec::new();
    for spec in specs {
        let (series, report) = ingest_csv(&spec.path, &spec.schema)?;
        let stats = descriptive_stats(&series)?;
        let canonical_path = out_dir.join(format!("{}.csv", spec.label));
        write_with(&canonical_path, |b| series.write_csv(b, &spec.schema))?;
        out.push(IngestSummary {
            label: spec.label.clone(),
            report,
            stats,
            canonical_path,
        });
    }
    write_with(&out_dir.join("descriptive_stats.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["index", "count", "mean", "std", "min", "25%", "50%", "75%", "max"])?;
        for s in &out {
            let d = &s.stats;
            let mut rec = vec![s.label.clone(), d.count.to_string()];
            rec.extend([d.mean, d.std, d.min, d.q25, d.median, d.q75, d.max].map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(out)
}

/// Equal-weight ensemble of equity-curve CSVs; writes `equity.csv` and
/// `metrics.csv` (components then `Ensemble`) to `out_dir`.
pub fn ensemble_files(inputs: &[(String, PathBuf)], out_dir: &Path) -> Result<PerfMetrics> {
    let comps: Vec<(String, EquityCurve)> = inputs
        .iter()
        .map(|(l, p)| Ok((l.clone(), read_curve(p)?)))
        .collect::<Result<_>>()?;
    let (curve, metrics) = equal_weight(&comps, MetricsConfig::default())?;
    write_with(&out_dir.join("equity.csv"), |b| curve.write_csv(b))?;
    let mut rows = comps
        .iter()
        .map(|(l, c)| Ok((l.clone(), compute_all(c, MetricsConfig::default())?)))
        .collect::<Result<Vec<_>>>()?;
    rows.push(("Ensemble".into(), metrics));
    write_with(&out_dir.join("metrics.csv"), |b| write_metrics_csv(b, "strategy", &rows))?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: [f64; 6]) -> PerfMetrics {
        PerfMetrics {
            arc: v[0],
            asd: v[1],
            md: v[2],
            mld: v[3],
            ir_star: v[4],
            ir_double_star: v[5],
            ..Default::default()
        }
    }

    #[test]
    fn best_columns_pick_direction_per_metric() {
        let rows = [[5.0, 10.0, 20.0, 1.0, 0.5, 0.1], [6.0, 12.0, 20.0, 2.0, 0.4, 0.2]];
        let b = best_columns(&rows);
        assert_eq!(b[0], vec!["ASD", "MD", "MLD", "IR*"]);
        assert_eq!(b[1], vec!["ARC", "MD", "IR**"]);
    }

    #[test]
    fn metrics_table_flags_highest_ir2() {
        let rows = vec![
            ("ARIMA".to_string(), m([1.0, 1.0, 1.0, 1.0, 1.0, 0.3])),
            ("LSTM".to_string(), m([1.0, 1.0, 1.0, 1.0, 1.0, 0.7])),
            (BENCHMARK_LABEL.to_string(), m([1.0, 1.0, 1.0, 1.0, 1.0, 0.7])),
        ];
        let mut buf = Vec::new();
        write_metrics_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let flags: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(flags, ["0", "1", "0"]);
    }

    #[test]
    fn scenario_family_sizes() {
        let base = RunConfig::default();
        let s = sensitivity_scenarios(&base);
        assert_eq!(s.len(), 6);
        assert_eq!(s.iter().filter(|c| c.models == [ModelKind::Arima]).count(), 2);
        for c in &s {
            c.sensitivity.validate().unwrap();
        }
        let lstm_only = RunConfig {
            models: vec![ModelKind::Lstm],
            ..RunConfig::default()
        };
        assert_eq!(sensitivity_scenarios(&lstm_only).len(), 4);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn artifact_hash_ignores_log_and_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("x")).unwrap();
        fs::write(dir.path().join("x/a.csv"), "1").unwrap();
        let h1 = artifact_hash(dir.path()).unwrap();
        fs::write(dir.path().join(LOG_FILE), "timing").unwrap();
        assert_eq!(artifact_hash(dir.path()).unwrap(), h1);
        fs::write(dir.path().join("x/a.csv"), "2").unwrap();
        assert_ne!(artifact_hash(dir.path()).unwrap(), h1);
    }
}
