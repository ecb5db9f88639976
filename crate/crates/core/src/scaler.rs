use serde::{Deserialize, Serialize};

/// Default output interval of feature scaling; keeps targets inside the
/// range a tanh head can reach.
pub const TARGET_LO: f64 = -0.9;
pub const TARGET_HI: f64 = 0.9;

/// Min-max scaler fitted on training rows only.
///
/// A constant column (`col_max <= col_min`) is degenerate: every value maps
/// to the midpoint of the target interval and the inverse returns `col_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub col_min: f64,
    pub col_max: f64,
    pub target_lo: f64,
    pub target_hi: f64,
}

impl FeatureScaler {
    pub fn fit(values: &[f64]) -> Self {
        Self::fit_to(values, TARGET_LO, TARGET_HI)
    }

    pub fn fit_to(values: &[f64], target_lo: f64, target_hi: f64) -> Self {
        let (col_min, col_max) = values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let (col_min, col_max) = if col_min.is_finite() { (col_min, col_max) } else { (0.0, 0.0) };
        Self {
            col_min,
            col_max,
            target_lo,
            target_hi,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.col_max > self.col_min)
    }

    pub fn transform(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return (self.target_lo + self.target_hi) / 2.0;
        }
        self.target_lo
            + (x - self.col_min) / (self.col_max - self.col_min) * (self.target_hi - self.target_lo)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        if self.is_degenerate() {
            return self.col_min;
        }
        self.col_min
            + (y - self.target_lo) / (self.target_hi - self.target_lo) * (self.col_max - self.col_min)
    }
}
