//! Fixed-weight combination of equity curves from different markets.
//!
//! Each component is normalized to 1 at the common start and held without
//! rebalancing, so the ensemble is the value of an initial allocation of
//! `weights[k]` to each curve.

use std::collections::BTreeSet;

use chrono::NaiveDate;

use crate::backtest::EquityCurve;
use crate::error::{Error, Result};
use crate::metrics::{compute_all, MetricsConfig, PerfMetrics};

/// Index of the last observation of `curve` on or before `date`.
fn locate(curve: &EquityCurve, cursor: &mut usize, date: NaiveDate) -> Option<usize> {
    while *cursor + 1 < curve.dates.len() && curve.dates[*cursor + 1] <= date {
        *cursor += 1;
    }
    (curve.dates[*cursor] <= date).then_some(*cursor)
}

fn cmp_f64s(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn cmp_curves(a: &EquityCurve, b: &EquityCurve) -> std::cmp::Ordering {
    a.dates
        .cmp(&b.dates)
        .then_with(|| cmp_f64s(&a.values, &b.values))
        .then_with(|| cmp_f64s(&a.strategy_returns, &b.strategy_returns))
        .then_with(|| cmp_f64s(&a.cost_paid, &b.cost_paid))
}

/// Combines curves on the union of their dates between the latest first
/// date and the earliest last date. Missing dates are forward-filled.
///
/// The ensemble return of each day is the value-share-weighted mean of the
/// component returns, and the ensemble curve compounds these from 1.0.
/// Identical components are merged first, so an ensemble of copies of one
/// curve reproduces it exactly.
pub fn combine(components: &[(String, EquityCurve)], weights: &[f64]) -> Result<EquityCurve> {
    if components.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = weights.iter().sum();
    if weights.len() != components.len() || (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::WeightSumInvalid(sum));
    }
    for (label, c) in components {
        if c.dates.is_empty()
            || c.dates.len() != c.values.len()
            || c.strategy_returns.len() + 1 != c.dates.len()
            || c.cost_paid.len() != c.strategy_returns.len()
        {
            return Err(Error::ShapeMismatch(format!("malformed equity curve `{label}`")));
        }
    }
    // Canonical order makes the result independent of input order.
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| cmp_curves(&components[a].1, &components[b].1).then(weights[a].total_cmp(&weights[b])));
    let mut groups: Vec<(&EquityCurve, f64)> = Vec::new();
    for k in order {
        let curve = &components[k].1;
        match groups.last_mut() {
            Some((c, w)) if cmp_curves(c, curve).is_eq() => *w += weights[k],
            _ => groups.push((curve, weights[k])),
        }
    }

    let start = components.iter().map(|(_, c)| c.dates[0]).max().unwrap();
    let end = components.iter().map(|(_, c)| *c.dates.last().unwrap()).min().unwrap();
    if start >= end {
        return Err(Error::NoCommonStart);
    }
    let calendar: Vec<NaiveDate> = components
        .iter()
        .flat_map(|(_, c)| c.dates.iter().copied())
        .filter(|d| *d >= start && *d <= end)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut cursors = vec![0usize; groups.len()];
    let mut last_idx = Vec::with_capacity(groups.len());
    for (g, (curve, _)) in groups.iter().enumerate() {
        last_idx.push(locate(curve, &mut cursors[g], start).ok_or(Error::NoCommonStart)?);
    }
    // Allocation of each group, in units of the ensemble's starting value.
    let mut holdings: Vec<f64> = groups.iter().map(|(_, w)| *w).collect();
    let mut values = Vec::with_capacity(calendar.len());
    let mut returns = Vec::with_capacity(calendar.len().saturating_sub(1));
    let mut costs = Vec::with_capacity(calendar.len().saturating_sub(1));
    let mut value = 1.0;
    values.push(value);
    for &date in &calendar[1..] {
        let total: f64 = holdings.iter().sum();
        let mut r = 0.0;
        let mut cost = 0.0;
        for (g, (curve, _)) in groups.iter().enumerate() {
            let j = locate(curve, &mut cursors[g], date).ok_or(Error::NoCommonStart)?;
            if j != last_idx[g] {
                let share = holdings[g] / total;
                let rk = curve.values[j] / curve.values[last_idx[g]] - 1.0;
                let rk = if j == last_idx[g] + 1 { curve.strategy_returns[j - 1] } else { rk };
                r += share * rk;
                cost += share * curve.cost_paid[last_idx[g]..j].iter().sum::<f64>();
                holdings[g] *= 1.0 + rk;
                last_idx[g] = j;
            }
        }
        value *= 1.0 + r;
        values.push(value);
        returns.push(r);
        costs.push(cost);
    }
    Ok(EquityCurve {
        dates: calendar,
        values,
        strategy_returns: returns,
        cost_paid: costs,
        positions: Vec::new(),
        ruined: components.iter().any(|(_, c)| c.ruined),
    })
}

/// Equal-weight ensemble and its metrics.
pub fn equal_weight(components: &[(String, EquityCurve)], config: MetricsConfig) -> Result<(EquityCurve, PerfMetrics)> {
    if components.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = components.len();
    let mut weights = vec![1.0 / n as f64; n];
    // Put the rounding residue on the last weight so the sum is exactly 1.
    let head: f64 = weights[..n - 1].iter().sum();
    weights[n - 1] = 1.0 - head;
    let curve = combine(components, &weights)?;
    let metrics = compute_all(&curve, config)?;
    Ok((curve, metrics))
}
