//! OHLCV ingestion and derived return / volatility columns.
//!
//! Input files follow the Yahoo Finance daily layout
//! (`Date,Open,High,Low,Close,Adj Close,Volume`). Column names can be
//! remapped through [`CsvSchema`]. Rows are sorted by date, rows whose
//! price fields cannot be parsed (or whose close is not positive) are
//! dropped and counted, and a missing volume becomes 0 with a warning.
//!
//! The series is treated as gapless by index position: exchange holidays
//! are simply absent rows and returns are taken between consecutive rows.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trading days per year, used for every annualization in the crate.
pub const PERIODS_PER_YEAR: usize = 252;

/// Default rolling window for realized volatility.
pub const REALIZED_VOL_WINDOW: usize = 21;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl Bar {
    fn is_consistent(&self) -> bool {
        self.close > 0.0
            && self.high >= self.open.max(self.close)
            && self.low <= self.open.min(self.close)
            && self.volume >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilitySource {
    /// Pre-supplied column such as the VIX.
    External,
    /// Rolling 21-day annualized realized volatility.
    RealizedVol21,
}

/// Which price column drives modelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceField {
    #[default]
    Close,
    AdjClose,
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date: String,
    pub open: Option<String>,
    pub high: Option<String>,
    pub low: Option<String>,
    pub close: String,
    pub adj_close: Option<String>,
    pub volume: String,
    /// Optional external volatility column (e.g. `VIX`).
    pub volatility: Option<String>,
    /// Multiplier turning the external column into a fraction (0.01 for VIX points).
    pub volatility_scale: f64,
    pub price_field: PriceField,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "Date".into(),
            open: Some("Open".into()),
            high: Some("High".into()),
            low: Some("Low".into()),
            close: "Close".into(),
            adj_close: Some("Adj Close".into()),
            volume: "Volume".into(),
            volatility: None,
            volatility_scale: 0.01,
            price_field: PriceField::Close,
        }
    }
}

/// Row-level bookkeeping produced while cleaning an input file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub dropped_count: usize,
    pub missing_volume: usize,
}

/// Date-aligned observations plus derived returns and volatility.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    bars: Vec<Bar>,
    returns: Vec<f64>,
    volatility: Vec<Option<f64>>,
    volatility_source: VolatilitySource,
    /// Raw external column as read, kept so canonical output round-trips.
    external_raw: Option<Vec<Option<f64>>>,
    price_field: PriceField,
}

impl PriceSeries {
    /// Builds a series with realized volatility.
    pub fn from_bars(bars: Vec<Bar>) -> Result<Self> {
        Self::build(bars, None, 0.01, PriceField::Close)
    }

    /// Builds a series using an external volatility column expressed in
    /// `scale` units per fraction.
    pub fn with_external_volatility(
        bars: Vec<Bar>,
        external: Vec<Option<f64>>,
        scale: f64,
    ) -> Result<Self> {
        Self::build(bars, Some(external), scale, PriceField::Close)
    }

    fn build(
        bars: Vec<Bar>,
        external: Option<Vec<Option<f64>>>,
        scale: f64,
        price_field: PriceField,
    ) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::EmptyInput);
        }
        for pair in bars.windows(2) {
            if pair[1].date == pair[0].date {
                return Err(Error::DuplicateDate(pair[1].date));
            }
            if pair[1].date < pair[0].date {
                return Err(Error::Parse(format!(
                    "dates out of order at {}",
                    pair[1].date
                )));
            }
        }
        let prices: Vec<f64> = bars
            .iter()
            .map(|b| match price_field {
                PriceField::Close => b.close,
                PriceField::AdjClose => b.adj_close,
            })
            .collect();
        let returns = simple_returns(&prices);
        let (volatility, volatility_source) = match &external {
            Some(ext) => {
                if ext.len() != bars.len() {
                    return Err(Error::LengthMismatch {
                        left: ext.len(),
                        right: bars.len(),
                    });
                }
                let vol = ext
                    .iter()
                    .map(|v| v.filter(|x| x.is_finite() && *x >= 0.0).map(|x| x * scale))
                    .collect();
                (vol, VolatilitySource::External)
            }
            None => {
                let mut vol = vec![None; bars.len()];
                if returns.len() >= REALIZED_VOL_WINDOW {
                    let rv = rolling_realized_vol(&returns, REALIZED_VOL_WINDOW);
                    // Return index t closes at bar t + 1.
                    for (k, v) in rv.into_iter().enumerate() {
                        vol[k + REALIZED_VOL_WINDOW] = Some(v);
                    }
                }
                (vol, VolatilitySource::RealizedVol21)
            }
        };
        Ok(Self {
            bars,
            returns,
            volatility,
            volatility_source,
            external_raw: external,
            price_field,
        })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Simple returns, `returns[i]` running from bar `i` to bar `i + 1`.
    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Annualized volatility aligned to bars; `None` where undefined.
    pub fn volatility(&self) -> &[Option<f64>] {
        &self.volatility
    }

    pub fn volatility_source(&self) -> VolatilitySource {
        self.volatility_source
    }

    pub fn price_field(&self) -> PriceField {
        self.price_field
    }

    /// The modelling price column (close unless configured otherwise).
    pub fn closes(&self) -> Vec<f64> {
        self.bars
            .iter()
            .map(|b| match self.price_field {
                PriceField::Close => b.close,
                PriceField::AdjClose => b.adj_close,
            })
            .collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.volume).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Replaces the bars while keeping the volatility configuration.
    /// Used to perturb data in look-ahead checks.
    pub fn with_bars(&self, bars: Vec<Bar>) -> Result<Self> {
        let scale = if self.external_raw.is_some() {
            // Recover scale from the first defined pair; fall back to VIX points.
            self.external_raw
                .as_ref()
                .and_then(|raw| {
                    raw.iter()
                        .zip(&self.volatility)
                        .find_map(|(r, v)| match (r, v) {
                            (Some(r), Some(v)) if *r != 0.0 => Some(v / r),
                            _ => None,
                        })
                })
                .unwrap_or(0.01)
        } else {
            0.01
        };
        let external = self.external_raw.clone().map(|mut raw| {
            raw.resize(bars.len(), None);
            raw
        });
        Self::build(bars, external, scale, self.price_field)
    }

    /// Writes the canonical CSV (Yahoo header, plus the external
    /// volatility column when one was ingested).
    pub fn write_csv<W: Write>(&self, writer: W, schema: &CsvSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let vol_col = match (&self.external_raw, &schema.volatility) {
            (Some(_), Some(name)) => Some(name.as_str()),
            (Some(_), None) => Some("Volatility"),
            _ => None,
        };
        let mut header = vec!["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"];
        if let Some(name) = vol_col {
            header.push(name);
        }
        w.write_record(&header)?;
        for (i, b) in self.bars.iter().enumerate() {
            let mut row = vec![
                b.date.format(DATE_FORMAT).to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.adj_close.to_string(),
                b.volume.to_string(),
            ];
            if let Some(raw) = &self.external_raw {
                row.push(raw[i].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `R_t = (P_t - P_{t-1}) / P_{t-1}`.
pub fn simple_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect()
}

fn rolling_realized_vol(returns: &[f64], window: usize) -> Vec<f64> {
    let annualize = (PERIODS_PER_YEAR as f64).sqrt();
    returns
        .windows(window)
        .map(|w| {
            let ss: f64 = w.iter().map(|r| r * r).sum();
            (ss / window as f64).sqrt() * annualize
        })
        .collect()
}

/// Rolling annualized realized volatility over the series' returns.
///
/// Entry `k` covers returns `k..k + window`, i.e. it is the value at return
/// index `k + window - 1`.
pub fn realized_volatility(series: &PriceSeries, window: usize) -> Result<Vec<f64>> {
    realized_volatility_of(series.returns(), window)
}

pub fn realized_volatility_of(returns: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || returns.len() < window {
        return Err(Error::SeriesTooShort {
            needed: window.max(1),
            actual: returns.len(),
        });
    }
    Ok(rolling_realized_vol(returns, window))
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn required_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    find_column(headers, name).ok_or_else(|| Error::MissingColumn {
        column: name.to_string(),
        header: headers.iter().collect::<Vec<_>>().join(","),
    })
}

fn optional_column(headers: &csv::StringRecord, name: &Option<String>) -> Option<usize> {
    name.as_deref().and_then(|n| find_column(headers, n))
}

fn parse_num(field: Option<&str>) -> Option<f64> {
    field
        .map(str::trim)
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Reads an OHLCV CSV file into a cleaned [`PriceSeries`].
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<(PriceSeries, IngestReport)> {
    let file = std::fs::File::open(path)?;
    let (series, report) = ingest_reader(file, schema).map_err(|e| match e {
        Error::EmptyInput => Error::EmptyAfterCleaning {
            path: path.to_path_buf(),
        },
        other => other,
    })?;
    Ok((series, report))
}

/// Same as [`ingest_csv`] over any reader.
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<(PriceSeries, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_col = required_column(&headers, &schema.date)?;
    let close_col = required_column(&headers, &schema.close)?;
    let volume_col = required_column(&headers, &schema.volume)?;
    let open_col = optional_column(&headers, &schema.open);
    let high_col = optional_column(&headers, &schema.high);
    let low_col = optional_column(&headers, &schema.low);
    let adj_col = optional_column(&headers, &schema.adj_close);
    let vol_col = match &schema.volatility {
        Some(name) => Some(required_column(&headers, name)?),
        None => None,
    };

    let mut report = IngestReport::default();
    let mut rows: Vec<(Bar, Option<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let date = record
            .get(date_col)
            .and_then(|s| NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok());
        let close = parse_num(record.get(close_col)).filter(|c| *c > 0.0);
        let (Some(date), Some(close)) = (date, close) else {
            report.dropped_count += 1;
            continue;
        };
        let price_or_close = |col: Option<usize>| match col {
            Some(c) => parse_num(record.get(c)),
            None => Some(close),
        };
        let (Some(open), Some(high), Some(low)) = (
            price_or_close(open_col),
            price_or_close(high_col),
            price_or_close(low_col),
        ) else {
            report.dropped_count += 1;
            continue;
        };
        let adj_close = adj_col
            .and_then(|c| parse_num(record.get(c)))
            .unwrap_or(close);
        let volume = match parse_num(record.get(volume_col)).filter(|v| *v >= 0.0) {
            Some(v) => v,
            None => {
                log::warn!("missing volume on {date}, using 0");
                report.missing_volume += 1;
                0.0
            }
        };
        let bar = Bar {
            date,
            open,
            high,
            low,
            close,
            adj_close,
            volume,
        };
        if !bar.is_consistent() {
            report.dropped_count += 1;
            continue;
        }
        let ext = vol_col.and_then(|c| parse_num(record.get(c)));
        rows.push((bar, ext));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    rows.sort_by_key(|(b, _)| b.date);
    for pair in rows.windows(2) {
        if pair[0].0.date == pair[1].0.date {
            return Err(Error::DuplicateDate(pair[0].0.date));
        }
    }
    let (bars, ext): (Vec<Bar>, Vec<Option<f64>>) = rows.into_iter().unzip();
    let external = vol_col.map(|_| ext);
    let series = PriceSeries::build(bars, external, schema.volatility_scale, schema.price_field)?;
    Ok((series, report))
}

/// Summary statistics of the closing price (Table-1 style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn descriptive_stats(series: &PriceSeries) -> Result<DescriptiveStats> {
    describe(&series.closes())
}

/// Sample statistics with linearly interpolated quartiles.
pub fn describe(values: &[f64]) -> Result<DescriptiveStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: 2, actual: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DescriptiveStats {
        count: n,
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
