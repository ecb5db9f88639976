//! Run configuration. Every default is the base case, so an empty file
//! describes a complete run once data paths are given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arima::{Criterion, OrderSearch};
use crate::backtest::{StrategyMode, DEFAULT_COST_RATE};
use crate::error::{Error, Result};
use crate::hybrid::{ModelKind, TrainSettings};
use crate::market_data::CsvSchema;
use crate::tuning::SearchSpace;
use crate::walkforward::WalkConfig;

pub const SENSITIVITY_DROPOUT: [f64; 2] = [0.05, 0.1];
pub const SENSITIVITY_BATCH: [usize; 2] = [16, 64];
/// Reduced ARIMA order bound used by the order-range scenario.
pub const SENSITIVITY_MAX_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub label: String,
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningSection {
    pub n_trials: usize,
    pub space: SearchSpace,
    pub train: TrainSettings,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            n_trials: 20,
            space: SearchSpace::default(),
            train: TrainSettings::default(),
        }
    }
}

/// Single-parameter deviations from the base case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOverrides {
    pub dropout: Option<f64>,
    pub batch_size: Option<usize>,
    /// Upper bound for both `p` and `q` in the ARIMA order search.
    pub arima_max_order: Option<usize>,
    pub criterion: Option<Criterion>,
}

impl SensitivityOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(d) = self.dropout {
            parts.push(format!("dropout={d}"));
        }
        if let Some(b) = self.batch_size {
            parts.push(format!("batch={b}"));
        }
        if let Some(m) = self.arima_max_order {
            parts.push(format!("order=0-{m},1,0-{m}"));
        }
        if let Some(c) = self.criterion {
            parts.push(format!("criterion={}", if c == Criterion::Bic { "BIC" } else { "AIC" }));
        }
        if parts.is_empty() {
            "base".into()
        } else {
            parts.join(",")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.dropout {
            if !SENSITIVITY_DROPOUT.contains(&d) {
                return Err(Error::InvalidConfig(format!("dropout override {d} is not in {SENSITIVITY_DROPOUT:?}")));
            }
        }
        if let Some(b) = self.batch_size {
            if !SENSITIVITY_BATCH.contains(&b) {
                return Err(Error::InvalidConfig(format!("batch override {b} is not in {SENSITIVITY_BATCH:?}")));
            }
        }
        if let Some(m) = self.arima_max_order {
            if m != SENSITIVITY_MAX_ORDER {
                return Err(Error::InvalidConfig(format!(
                    "order-range override must be {SENSITIVITY_MAX_ORDER}, got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub indices: Vec<IndexSpec>,
    pub models: Vec<ModelKind>,
    pub modes: Vec<StrategyMode>,
    pub walk: WalkConfig,
    pub arima: OrderSearch,
    pub tuning: TuningSection,
    pub cost_rate: f64,
    pub seed: u64,
    pub sensitivity: SensitivityOverrides,
    /// Accept overrides outside the declared sensitivity sets.
    #[serde(rename = "unsafe")]
    pub allow_unsafe: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            indices: Vec::new(),
            models: ModelKind::ALL.to_vec(),
            modes: vec![StrategyMode::LongOnly, StrategyMode::LongShort],
            walk: WalkConfig::default(),
            arima: OrderSearch::default(),
            tuning: TuningSection::default(),
            cost_rate: DEFAULT_COST_RATE,
            seed: 0,
            sensitivity: SensitivityOverrides::default(),
            allow_unsafe: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Loads a TOML file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for idx in &mut cfg.indices {
            if idx.path.is_relative() {
                idx.path = base.join(&idx.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::InvalidConfig("no input series configured".into()));
        }
        let mut labels: Vec<&str> = self.indices.iter().map(|i| i.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("index labels must be unique".into()));
        }
        if labels.iter().any(|l| l.is_empty() || l.contains(['/', '\\']) || *l == "ensemble") {
            return Err(Error::InvalidConfig("index labels must be non-empty file-name-safe and not `ensemble`".into()));
        }
        if self.models.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidConfig("at least one model and one mode are required".into()));
        }
        if !(0.0..1.0).contains(&self.cost_rate) {
            return Err(Error::InvalidConfig(format!("cost rate {}", self.cost_rate)));
        }
        if self.tuning.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be positive".into()));
        }
        if self.tuning.space.size() == 0 {
            return Err(Error::InvalidConfig("empty hyperparameter space".into()));
        }
        if !self.allow_unsafe {
            self.sensitivity.validate()?;
        }
        Ok(())
    }

    /// Search space and ARIMA settings with sensitivity overrides applied.
    pub fn effective(&self) -> (SearchSpace, OrderSearch) {
        let mut space = self.tuning.space.clone();
        let mut search = self.arima.clone();
        let s = &self.sensitivity;
        if let Some(d) = s.dropout {
            space.dropout = vec![d];
        }
        if let Some(b) = s.batch_size {
            space.batch_size = vec![b];
        }
        if let Some(m) = s.arima_max_order {
            search.p_max = m;
            search.q_max = m;
        }
        if let Some(c) = s.criterion {
            search.criterion = c;
        }
        (space, search)
    }

    /// Hash of the configuration and the contents of every input file.
    /// Data paths themselves are not part of the hash.
    pub fn run_hash(&self) -> Result<String> {
        let mut canon = self.clone();
        let mut h = Sha256::new();
        for idx in &mut canon.indices {
            let bytes = std::fs::read(&idx.path)?;
            h.update(idx.label.as_bytes());
            h.update(Sha256::digest(&bytes));
            idx.path = PathBuf::new();
        }
        h.update(serde_json::to_vec(&canon)?);
        Ok(hex::encode(&h.finalize()[..8]))
    }
}
