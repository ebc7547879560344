//! Truncated-power spline basis with ridge-type shrinkage on the knot
//! coefficients, used to let a scalar covariate act nonparametrically inside
//! the linear predictors.
//!
//! The raw covariate is scaled to [0,1] with a range frozen from the
//! training data, then expanded as
//! (1, x, ..., x^q, (x-k_1)_+^q, ..., (x-k_K)_+^q); the final K columns are
//! the ones a gamma-precision shrinkage prior acts on.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StzipError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    /// Polynomial degree of the basis.
    pub q: usize,
    /// Interior knots, strictly increasing, inside (0,1).
    pub knots: Vec<f64>,
    /// (min, max) of the raw covariate over the training data; inputs are
    /// scaled by this range and clamped to [0,1].
    pub input_range: (f64, f64),
}

impl SplineSpec {
    /// Degree-2 basis with nine evenly spaced knots, the default layout.
    pub fn default_for_range(min: f64, max: f64) -> Result<Self> {
        let knots = (1..=9).map(|l| l as f64 / 10.0).collect();
        SplineSpec::new(2, knots, (min, max))
    }

    pub fn new(q: usize, knots: Vec<f64>, input_range: (f64, f64)) -> Result<Self> {
        let spec = SplineSpec { q, knots, input_range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(StzipError::Config("spline degree must be at least 1".into()));
        }
        if self.knots.is_empty() {
            return Err(StzipError::Config("spline needs at least one interior knot".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(StzipError::Config(format!(
                    "spline knots must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.knots[0] <= 0.0 || *self.knots.last().unwrap() >= 1.0 {
            return Err(StzipError::Config("spline knots must lie strictly inside (0,1)".into()));
        }
        let (lo, hi) = self.input_range;
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(StzipError::Config(format!(
                "spline input range must be a proper interval, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    /// Columns produced per input: 1 + q + K.
    pub fn basis_len(&self) -> usize {
        1 + self.q + self.knots.len()
    }

    /// Scale a raw input into [0,1], clamping anything outside the frozen
    /// training range (clamping is reported once per process).
    pub fn scale_input(&self, x_raw: f64) -> f64 {
        static CLAMP_WARNING: std::sync::Once = std::sync::Once::new();
        let (lo, hi) = self.input_range;
        let x = (x_raw - lo) / (hi - lo);
        if !(0.0..=1.0).contains(&x) {
            CLAMP_WARNING.call_once(|| {
                eprintln!(
                    "warning: spline input {x_raw} outside the training range [{lo}, {hi}]; clamping"
                );
            });
        }
        x.clamp(0.0, 1.0)
    }

    /// The expanded row (1, x, ..., x^q, (x-k_1)_+^q, ..., (x-k_K)_+^q) for
    /// one raw input value.
    pub fn basis_row(&self, x_raw: f64) -> Vec<f64> {
        let x = self.scale_input(x_raw);
        let mut row = Vec::with_capacity(self.basis_len());
        row.push(1.0);
        let mut pow = 1.0;
        for _ in 0..self.q {
            pow *= x;
            row.push(pow);
        }
        for &k in &self.knots {
            let d = (x - k).max(0.0);
            row.push(d.powi(self.q as i32));
        }
        row
    }
}

/// Per-observation design rows (extra covariates first, then the spline
/// basis), plus the half-open column span the shrinkage prior applies to.
pub struct SplineDesign {
    pub rows: Vec<Vec<f64>>,
    pub shrink_span: std::ops::Range<usize>,
}

pub fn assemble_design(
    spec: &SplineSpec,
    raw_covariates: &[f64],
    extra_covariates: &[Vec<f64>],
) -> Result<SplineDesign> {
    spec.validate()?;
    if raw_covariates.len() != extra_covariates.len() {
        return Err(StzipError::input(format!(
            "spline design length mismatch: {} spline inputs vs {} extra-covariate rows",
            raw_covariates.len(),
            extra_covariates.len()
        )));
    }
    let extra_len = extra_covariates.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(raw_covariates.len());
    for (i, (&x, extra)) in raw_covariates.iter().zip(extra_covariates).enumerate() {
        if extra.len() != extra_len {
            return Err(StzipError::input_at(
                format!("ragged extra covariates: expected {extra_len}, got {}", extra.len()),
                i + 1,
            ));
        }
        let mut row = Vec::with_capacity(extra_len + spec.basis_len());
        row.extend_from_slice(extra);
        row.extend(spec.basis_row(x));
        rows.push(row);
    }
    let start = extra_len + 1 + spec.q;
    let end = start + spec.knot_count();
    Ok(SplineDesign { rows, shrink_span: start..end })
}
