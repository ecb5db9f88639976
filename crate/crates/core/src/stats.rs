//! Significance tests of strategy returns against a benchmark.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Conventional significance level for flagging results.
pub const SIGNIFICANCE_LEVEL: f64 = 0.10;

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn t_upper_tail_p(t: f64, df: u32) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    if t == 0.0 {
        return 0.5;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid Student-t parameters");
    dist.sf(t).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub mean_diff: f64,
    pub t_stat: f64,
    /// One-sided, alternative `mean_diff > 0`.
    pub p_value: f64,
    pub n: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < min {
        return Err(Error::SeriesTooShort {
            needed: min,
            actual: a.len(),
        });
    }
    Ok(())
}

/// Paired t-test of `strategy - benchmark`.
pub fn paired_t_test(strategy: &[f64], benchmark: &[f64]) -> Result<PairedTestResult> {
    check_lengths(strategy, benchmark, 2)?;
    let d: Vec<f64> = strategy.iter().zip(benchmark).map(|(s, b)| s - b).collect();
    let n = d.len();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if sd <= 1e-10 * scale || sd == 0.0 {
        return Err(Error::ZeroVarianceDifferences);
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(PairedTestResult {
        mean_diff: m,
        t_stat: t,
        p_value: t_upper_tail_p(t, (n - 1) as u32),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsAlphaResult {
    pub alpha: f64,
    pub se_alpha: f64,
    pub t_alpha: f64,
    pub p_alpha: f64,
    pub beta: f64,
    pub se_beta: f64,
    pub t_beta: f64,
    pub p_beta: f64,
    pub n: usize,
    /// Residuals vanish; standard errors are zero and t/p take their limits.
    pub degenerate_residuals: bool,
}

pub const OLS_COLUMNS: [&str; 8] = [
    "alpha", "se_alpha", "t_alpha", "p_alpha", "beta", "se_beta", "t_beta", "p_beta",
];

impl OlsAlphaResult {
    pub fn values(&self) -> [f64; 8] {
        [
            self.alpha,
            self.se_alpha,
            self.t_alpha,
            self.p_alpha,
            self.beta,
            self.se_beta,
            self.t_beta,
            self.p_beta,
        ]
    }
}

/// t statistic and upper-tail p-value, with limits for a zero standard error.
fn t_and_p(estimate: f64, se: f64, df: u32) -> (f64, f64) {
    if se > 0.0 {
        let t = estimate / se;
        (t, t_upper_tail_p(t, df))
    } else if estimate > 0.0 {
        (f64::INFINITY, 0.0)
    } else if estimate < 0.0 {
        (f64::NEG_INFINITY, 1.0)
    } else {
        (0.0, 0.5)
    }
}

/// Simple regression `strategy = alpha + beta * benchmark + e` with
/// one-sided upper-tail tests on both coefficients.
pub fn ols_alpha(strategy: &[f64], benchmark: &[f64]) -> Result<OlsAlphaResult> {
    check_lengths(strategy, benchmark, 3)?;
    let n = strategy.len();
    let mx = mean(benchmark);
    let my = mean(strategy);
    let sxx: f64 = benchmark.iter().map(|x| (x - mx) * (x - mx)).sum();
    let x_scale = benchmark.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if !(sxx > 1e-20 * x_scale * x_scale * n as f64) || sxx == 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let sxy: f64 = benchmark
        .iter()
        .zip(strategy)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let ssr: f64 = benchmark
        .iter()
        .zip(strategy)
        .map(|(x, y)| {
            let e = y - alpha - beta * x;
            e * e
        })
        .sum();
    let sst: f64 = strategy.iter().map(|y| (y - my) * (y - my)).sum();
    let y_scale = strategy.iter().fold(0.0f64, |acc, y| acc.max(y.abs()));
    let df = (n - 2) as u32;
    let degenerate = ssr <= 1e-20 * sst.max(y_scale * y_scale * n as f64);
    let (se_alpha, se_beta) = if degenerate {
        (0.0, 0.0)
    } else {
        let s2 = ssr / df as f64;
        let sum_x2: f64 = benchmark.iter().map(|x| x * x).sum();
        ((s2 * sum_x2 / (n as f64 * sxx)).sqrt(), (s2 / sxx).sqrt())
    };
    let (t_alpha, p_alpha) = t_and_p(alpha, se_alpha, df);
    let (t_beta, p_beta) = t_and_p(beta, se_beta, df);
    Ok(OlsAlphaResult {
        alpha,
        se_alpha,
        t_alpha,
        p_alpha,
        beta,
        se_beta,
        t_beta,
        p_beta,
        n,
        degenerate_residuals: degenerate,
    })
}

/// Restricts two dated series to their common dates. Inputs must be sorted
/// by date.
pub fn align_by_date(a: &[(NaiveDate, f64)], b: &[(NaiveDate, f64)]) -> (Vec<NaiveDate>, Vec<f64>, Vec<f64>) {
    let (mut i, mut j) = (0, 0);
    let (mut dates, mut xa, mut xb) = (Vec::new(), Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dates.push(a[i].0);
                xa.push(a[i].1);
                xb.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (dates, xa, xb)
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

/// Writes `label,mean_diff,t_stat,p_value,n`.
pub fn write_paired_csv<W: std::io::Write>(writer: W, rows: &[(String, PairedTestResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "mean_diff", "t_stat", "p_value", "n"])?;
    for (label, r) in rows {
        w.write_record([
            label.clone(),
            format!("{:.8}", r.mean_diff),
            fmt_num(r.t_stat),
            fmt_num(r.p_value),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `label,alpha,se_alpha,t_alpha,p_alpha,beta,se_beta,t_beta,p_beta`.
pub fn write_ols_csv<W: std::io::Write>(writer: W, rows: &[(String, OlsAlphaResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["strategy"];
    header.extend(OLS_COLUMNS);
    w.write_record(&header)?;
    for (label, r) in rows {
        let mut rec = vec![label.clone()];
        for (k, v) in r.values().iter().enumerate() {
            // Coefficients and their errors are small; keep more digits.
            rec.push(if k % 4 < 2 && v.is_finite() { format!("{v:.8}") } else { fmt_num(*v) });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
