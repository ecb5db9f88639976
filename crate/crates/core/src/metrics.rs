//! Strategy performance metrics, reported in percent (MLD in years).

use serde::{Deserialize, Serialize};

use crate::backtest::EquityCurve;
use crate::error::{Error, Result};
use crate::market_data::PERIODS_PER_YEAR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub periods_per_year: u32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            periods_per_year: PERIODS_PER_YEAR as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerfMetrics {
    pub arc: f64,
    pub asd: f64,
    pub md: f64,
    pub mld: f64,
    pub ir_star: f64,
    pub ir_double_star: f64,
    /// ASD was zero, so IR* (and IR**) were set to 0.
    pub degenerate_asd: bool,
    /// MD was zero, so IR** was set to 0.
    pub degenerate_md: bool,
}

pub const METRIC_COLUMNS: [&str; 6] = ["ARC", "ASD", "MD", "MLD", "IR*", "IR**"];

impl PerfMetrics {
    pub fn values(&self) -> [f64; 6] {
        [self.arc, self.asd, self.md, self.mld, self.ir_star, self.ir_double_star]
    }
}

/// Annualized compounded return in percent.
pub fn arc(returns: &[f64]) -> Result<f64> {
    arc_with(returns, MetricsConfig::default())
}

pub fn arc_with(returns: &[f64], config: MetricsConfig) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut log_growth = 0.0;
    for r in returns {
        if !(*r > -1.0) {
            return Err(Error::RuinReturn(*r));
        }
        log_growth += r.ln_1p();
    }
    let years_exp = config.periods_per_year as f64 / returns.len() as f64;
    Ok((log_growth * years_exp).exp_m1() * 100.0)
}

/// Annualized sample standard deviation in percent.
pub fn asd(returns: &[f64]) -> Result<f64> {
    asd_with(returns, MetricsConfig::default())
}

pub fn asd_with(returns: &[f64], config: MetricsConfig) -> Result<f64> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: 2, actual: n });
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let ss: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    Ok((config.periods_per_year as f64).sqrt() * sd * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drawdown {
    /// Percent.
    pub md: f64,
    pub peak_index: usize,
    pub trough_index: usize,
    /// First index at or above the peak after the trough, if any.
    pub recovery_index: Option<usize>,
}

/// Largest running-peak drawdown. The earliest trough attaining the
/// maximum is reported.
pub fn max_drawdown(equity: &[f64]) -> Result<Drawdown> {
    let first = *equity.first().ok_or(Error::EmptyInput)?;
    let mut peak = first;
    let mut peak_idx = 0;
    let mut best = Drawdown {
        md: 0.0,
        peak_index: 0,
        trough_index: 0,
        recovery_index: None,
    };
    for (i, &v) in equity.iter().enumerate() {
        if v > peak {
            peak = v;
            peak_idx = i;
        }
        let dd = (peak - v) / peak * 100.0;
        if dd > best.md {
            best = Drawdown {
                md: dd,
                peak_index: peak_idx,
                trough_index: i,
                recovery_index: None,
            };
        }
    }
    if best.md > 0.0 {
        let level = equity[best.peak_index];
        best.recovery_index = (best.trough_index + 1..equity.len()).find(|&j| equity[j] >= level);
    }
    Ok(best)
}

/// Longest span, in observations, from a running peak to the first later
/// observation at or above it, in years. A drawdown still open at the end
/// counts through the final observation. Spans without any loss do not count.
pub fn max_loss_duration(equity: &[f64]) -> Result<f64> {
    max_loss_duration_with(equity, MetricsConfig::default())
}

pub fn max_loss_duration_with(equity: &[f64], config: MetricsConfig) -> Result<f64> {
    Ok(max_loss_span(equity)? as f64 / config.periods_per_year as f64)
}

/// Longest loss episode in observations.
pub fn max_loss_span(equity: &[f64]) -> Result<usize> {
    let first = *equity.first().ok_or(Error::EmptyInput)?;
    let mut peak = first;
    let mut peak_idx = 0;
    let mut under = false;
    let mut longest = 0;
    for (i, &v) in equity.iter().enumerate().skip(1) {
        if v >= peak {
            if under {
                longest = longest.max(i - peak_idx);
            }
            under = false;
            peak = v;
            peak_idx = i;
        } else {
            under = true;
        }
    }
    if under {
        longest = longest.max(equity.len() - 1 - peak_idx);
    }
    Ok(longest)
}

/// `arc / asd * 100`; 0 when `asd` is 0. The flag reports the degenerate case.
pub fn ir_star(arc: f64, asd: f64) -> (f64, bool) {
    if asd == 0.0 {
        (0.0, true)
    } else {
        (arc / asd * 100.0, false)
    }
}

/// `ir_star * arc * sign(arc) / md`; 0 when `md` is 0.
pub fn ir_double_star(ir_star: f64, arc: f64, md: f64) -> (f64, bool) {
    if md == 0.0 {
        (0.0, true)
    } else {
        let sign = if arc > 0.0 {
            1.0
        } else if arc < 0.0 {
            -1.0
        } else {
            0.0
        };
        (ir_star * arc * sign / md, false)
    }
}

pub fn compute_all(curve: &EquityCurve, config: MetricsConfig) -> Result<PerfMetrics> {
    metrics_from_parts(&curve.strategy_returns, &curve.values, config)
}

/// All six metrics from a return series and its equity path.
pub fn metrics_from_parts(returns: &[f64], equity: &[f64], config: MetricsConfig) -> Result<PerfMetrics> {
    let arc = arc_with(returns, config)?;
    let asd = asd_with(returns, config)?;
    let dd = max_drawdown(equity)?;
    let mld = max_loss_duration_with(equity, config)?;
    let (irs, degenerate_asd) = ir_star(arc, asd);
    let (irss, degenerate_md) = if degenerate_asd {
        (0.0, dd.md == 0.0)
    } else {
        ir_double_star(irs, arc, dd.md)
    };
    Ok(PerfMetrics {
        arc,
        asd,
        md: dd.md,
        mld,
        ir_star: irs,
        ir_double_star: irss,
        degenerate_asd,
        degenerate_md,
    })
}

/// Metrics of a return series compounded from 1.0.
pub fn metrics_from_returns(returns: &[f64], config: MetricsConfig) -> Result<PerfMetrics> {
    let mut equity = Vec::with_capacity(returns.len() + 1);
    let mut v = 1.0;
    equity.push(v);
    for r in returns {
        v *= 1.0 + r;
        equity.push(v);
    }
    metrics_from_parts(returns, &equity, config)
}

/// Writes `label,ARC,ASD,MD,MLD,IR*,IR**` rows.
pub fn write_metrics_csv<W: std::io::Write>(
    writer: W,
    label_header: &str,
    rows: &[(String, PerfMetrics)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![label_header];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (label, m) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(m.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_metrics_csv`]. Degenerate flags are
/// re-derived from zero denominators.
pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, PerfMetrics)>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::Parse(format!("metrics row with {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number `{}`", &rec[i])))
        };
        let m = PerfMetrics {
            arc: num(1)?,
            asd: num(2)?,
            md: num(3)?,
            mld: num(4)?,
            ir_star: num(5)?,
            ir_double_star: num(6)?,
            degenerate_asd: num(2)? == 0.0,
            degenerate_md: num(3)? == 0.0,
        };
        out.push((rec[0].to_string(), m));
    }
    Ok(out)
}
