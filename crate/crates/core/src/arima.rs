//! ARIMA(p,d,q) estimation by conditional sum of squares, information
//! criterion order search, and one-step forecasting.
//!
//! The model on the `d`-times differenced series `w` is
//!
//! ```text
//! w_t = c + phi_1 w_{t-1} + ... + phi_p w_{t-p} + e_t + theta_1 e_{t-1} + ... + theta_q e_{t-q}
//! ```
//!
//! with the MA terms added (lag polynomial `1 + sum theta_i L^i`). A constant
//! is always estimated, also after differencing, where it acts as drift.
//! Errors before the conditioning start are set to zero.
//!
//! The information criteria count `k = p + q + 2` parameters (constant and
//! innovation variance included), for both AIC and BIC.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, BfgsOptions};

/// Largest AR / MA order accepted.
pub const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaSpec {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        let spec = Self { p, d, q };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.p > MAX_ORDER || self.q > MAX_ORDER || self.d > 1 {
            return Err(Error::InvalidOrder {
                p: self.p,
                d: self.d,
                q: self.q,
            });
        }
        Ok(())
    }

    /// Number of estimated parameters used in AIC/BIC.
    pub fn n_params(&self) -> usize {
        self.p + self.q + 2
    }
}

impl std::fmt::Display for ArimaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ARIMA({},{},{})", self.p, self.d, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// AR polynomial has a root on or inside the unit circle.
    NonStationary,
    /// MA polynomial has a root on or inside the unit circle.
    NonInvertible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    pub constant: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// In-sample one-step errors after differencing and conditioning burn-in.
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    /// Conditioning length on the differenced series (at least `p`).
    pub burn_in: usize,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl ArimaFit {
    pub fn criterion(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

/// `d` applications of first differencing.
pub fn difference(series: &[f64], d: usize) -> Result<Vec<f64>> {
    if series.len() <= d {
        return Err(Error::SeriesTooShort {
            needed: d + 1,
            actual: series.len(),
        });
    }
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverts [`difference`] given the first value of each intermediate
/// differencing level (`initial[k]` is the first element of the k-times
/// differenced series).
pub fn undifference(diffed: &[f64], initial: &[f64]) -> Vec<f64> {
    let mut out = diffed.to_vec();
    for &start in initial.iter().rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        let mut acc = start;
        level.push(acc);
        for v in &out {
            acc += v;
            level.push(acc);
        }
        out = level;
    }
    out
}

/// CSS residuals of an ARMA recursion. Entries before `burn_in` are not
/// computed; the returned vector starts at `burn_in`.
fn css_errors(w: &[f64], constant: f64, phi: &[f64], theta: &[f64], burn_in: usize) -> Vec<f64> {
    let n = w.len();
    let mut e = vec![0.0; n];
    for t in burn_in..n {
        let mut pred = constant;
        for (i, ph) in phi.iter().enumerate() {
            pred += ph * w[t - 1 - i];
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j {
                pred += th * e[t - 1 - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e.split_off(burn_in)
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Step-down (Schur-Cohn) test that `1 - a_1 z - ... - a_k z^k` has all roots
/// strictly outside the unit circle.
fn roots_outside_unit_circle(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&kappa) = a.last() {
        let k = a.len();
        if kappa.abs() >= 1.0 {
            return false;
        }
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (0..k - 1)
            .map(|j| (a[j] + kappa * a[k - 2 - j]) / denom)
            .collect();
        a = prev;
    }
    true
}

fn warnings_for(phi: &[f64], theta: &[f64]) -> Vec<FitWarning> {
    let mut out = Vec::new();
    if !roots_outside_unit_circle(phi) {
        out.push(FitWarning::NonStationary);
    }
    let neg_theta: Vec<f64> = theta.iter().map(|t| -t).collect();
    if !roots_outside_unit_circle(&neg_theta) {
        out.push(FitWarning::NonInvertible);
    }
    out
}

fn gaussian_loglik(sse: f64, n: usize) -> f64 {
    let n = n as f64;
    let sigma2 = (sse / n).max(f64::MIN_POSITIVE);
    -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

/// Fits ARIMA(p,d,q) by conditional sum of squares.
pub fn fit(series: &[f64], spec: ArimaSpec) -> Result<ArimaFit> {
    fit_conditioned(series, spec, spec.p)
}

/// Like [`fit`], conditioning on the first `burn_in >= p` differenced values
/// so that models of different AR order share one estimation sample.
pub fn fit_conditioned(series: &[f64], spec: ArimaSpec, burn_in: usize) -> Result<ArimaFit> {
    spec.validate()?;
    let burn_in = burn_in.max(spec.p);
    let w = difference(series, spec.d)?;
    let needed = 10 * (spec.p + spec.q + 1);
    if w.len() < needed || w.len() <= burn_in {
        return Err(Error::SeriesTooShort {
            needed: needed.max(burn_in + 1),
            actual: w.len(),
        });
    }

    // Optimize on a standardized copy so the tolerance is scale free.
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    let z: Vec<f64> = w.iter().map(|v| v / scale).collect();
    let (p, q) = (spec.p, spec.q);
    let n_obs = z.len() - burn_in;
    let objective = |x: &[f64]| {
        let e = css_errors(&z, x[0], &x[1..1 + p], &x[1 + p..], burn_in);
        let v = sum_sq(&e) / n_obs as f64;
        if v.is_finite() && v < 1e100 {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x0 = vec![0.0; 1 + p + q];
    x0[0] = mean / scale;
    let out = minimize(objective, &x0, BfgsOptions::default());
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            grad_norm: out.grad_norm,
        });
    }

    let constant = out.x[0] * scale;
    let phi = out.x[1..1 + p].to_vec();
    let theta = out.x[1 + p..].to_vec();
    let residuals = css_errors(&w, constant, &phi, &theta, burn_in);
    let sse = sum_sq(&residuals);
    let sigma2 = sse / n_obs as f64;
    let loglik = gaussian_loglik(sse, n_obs);
    let k = spec.n_params();
    let warnings = warnings_for(&phi, &theta);
    for warning in &warnings {
        log::debug!("{spec}: {warning:?}");
    }
    Ok(ArimaFit {
        spec,
        constant,
        phi,
        theta,
        sigma2,
        loglik,
        aic: aic(loglik, k),
        bic: bic(loglik, k, n_obs),
        residuals,
        n_obs,
        burn_in,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCandidate {
    pub spec: ArimaSpec,
    /// Criterion value; NaN when the fit failed.
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSearchResult {
    pub best: ArimaFit,
    pub table: Vec<OrderCandidate>,
}

/// Order-search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderSearch {
    pub p_max: usize,
    pub d: usize,
    pub q_max: usize,
    pub criterion: Criterion,
}

impl Default for OrderSearch {
    fn default() -> Self {
        Self {
            p_max: 6,
            d: 1,
            q_max: 6,
            criterion: Criterion::Aic,
        }
    }
}

impl OrderSearch {
    pub fn run(&self, series: &[f64]) -> Result<OrderSearchResult> {
        search_orders(series, 0..=self.p_max, self.d, 0..=self.q_max, self.criterion)
    }
}

/// Fits every order in the grid and keeps the minimum-criterion fit.
///
/// All candidates condition on the same sample (burn-in = largest `p`), so
/// their likelihoods are comparable. Ties go to smaller `p + q`, then
/// smaller `p`, which makes the winner independent of evaluation order.
pub fn search_orders(
    series: &[f64],
    p_range: RangeInclusive<usize>,
    d: usize,
    q_range: RangeInclusive<usize>,
    criterion: Criterion,
) -> Result<OrderSearchResult> {
    if p_range.is_empty() || q_range.is_empty() {
        return Err(Error::InvalidConfig("empty order range".into()));
    }
    let burn_in = *p_range.end();
    let grid: Vec<ArimaSpec> = p_range
        .flat_map(|p| q_range.clone().map(move |q| ArimaSpec { p, d, q }))
        .collect();
    let fits: Vec<Result<ArimaFit>> = grid
        .par_iter()
        .map(|spec| fit_conditioned(series, *spec, burn_in))
        .collect();

    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<ArimaFit> = None;
    for (spec, result) in grid.iter().zip(fits) {
        match result {
            Ok(fit) => {
                let value = fit.criterion(criterion);
                table.push(OrderCandidate {
                    spec: *spec,
                    value,
                    converged: true,
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let key = |f: &ArimaFit| {
                            (f.criterion(criterion), f.spec.p + f.spec.q, f.spec.p)
                        };
                        let (bv, bpq, bp) = key(b);
                        let (v, pq, p) = key(&fit);
                        v < bv || (v == bv && (pq < bpq || (pq == bpq && p < bp)))
                    }
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(err) => {
                log::debug!("{spec} failed: {err}");
                table.push(OrderCandidate {
                    spec: *spec,
                    value: f64::NAN,
                    converged: false,
                });
            }
        }
    }
    let best = best.ok_or(Error::AllFitsFailed)?;
    Ok(OrderSearchResult { best, table })
}

/// Errors of the frozen model over an arbitrary history, aligned to it.
///
/// The first `d + burn_in` positions are zero. On the fit's own training
/// series this reproduces [`residual_series`]; on a longer history the
/// extra entries are the rolling one-step forecast errors.
pub fn innovations(fit: &ArimaFit, history: &[f64]) -> Result<Vec<f64>> {
    let d = fit.spec.d;
    let w = difference(history, d)?;
    let burn_in = fit.burn_in.min(w.len()).max(fit.spec.p.min(w.len()));
    let e = css_errors(&w, fit.constant, &fit.phi, &fit.theta, burn_in);
    let mut out = vec![0.0; history.len() - e.len()];
    out.extend(e);
    Ok(out)
}

/// In-sample residuals aligned to the original series (burn-in zero-filled).
pub fn residual_series(fit: &ArimaFit) -> Vec<f64> {
    let mut out = vec![0.0; fit.spec.d + fit.burn_in];
    out.extend_from_slice(&fit.residuals);
    out
}

/// One-step-ahead forecast of the original (undifferenced) series.
pub fn forecast_one(fit: &ArimaFit, history: &[f64]) -> Result<f64> {
    let (p, d) = (fit.spec.p, fit.spec.d);
    let needed = (p + d).max(d + 1).max(1);
    if history.len() < needed {
        return Err(Error::HistoryTooShort {
            needed,
            actual: history.len(),
        });
    }
    let w = difference(history, d)?;
    let burn_in = fit.burn_in.min(w.len()).max(p);
    let mut e = vec![0.0; burn_in];
    e.extend(css_errors(&w, fit.constant, &fit.phi, &fit.theta, burn_in));
    let n = w.len();
    let mut next = fit.constant;
    for (i, ph) in fit.phi.iter().enumerate() {
        next += ph * w[n - 1 - i];
    }
    for (j, th) in fit.theta.iter().enumerate() {
        if n > j {
            next += th * e[n - 1 - j];
        }
    }
    // Integrate back through each differencing level.
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut cur = history.to_vec();
    for _ in 0..d {
        levels.push(cur.clone());
        cur = cur.windows(2).map(|v| v[1] - v[0]).collect();
    }
    for level in levels.iter().rev() {
        next += level[level.len() - 1];
    }
    Ok(next)
}

/// Rolling one-step forecasts for every target index in `range`, each made
/// from `history[..t]` with frozen coefficients.
pub fn rolling_forecasts(
    fit: &ArimaFit,
    history: &[f64],
    range: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    range.map(|t| forecast_one(fit, &history[..t])).collect()
}
