//! Domain types shared by every sampler: observations, datasets, the latent
//! and parameter state, and prior/MCMC configuration.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StzipError};
use crate::math::{normal_cdf, sample_normal_negative, sample_normal_positive};

/// One point-referenced count.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Time period, 1-based.
    pub period: usize,
    /// Planar coordinates.
    pub location: [f64; 2],
    /// Observed count.
    pub count: u64,
    /// Covariate vector, intercept column included explicitly.
    pub covariates: Vec<f64>,
}

/// A full survey: observations over periods 1..=T, with possibly different
/// locations and sample sizes in each period.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    observations: Vec<Observation>,
    t_periods: usize,
    period_counts: Vec<usize>,
}

impl SurveyDataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(StzipError::input("dataset has no observations"));
        }
        let p = observations[0].covariates.len();
        let mut t_periods = 0usize;
        for (i, obs) in observations.iter().enumerate() {
            let row = i + 1;
            if obs.period == 0 {
                return Err(StzipError::input_at("period index must be 1-based", row));
            }
            if !obs.location[0].is_finite() || !obs.location[1].is_finite() {
                return Err(StzipError::input_at("location must be finite", row));
            }
            if obs.covariates.len() != p {
                return Err(StzipError::input_at(
                    format!("covariate dimension {} differs from first row's {p}", obs.covariates.len()),
                    row,
                ));
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(StzipError::input_at("covariates must be finite", row));
            }
            t_periods = t_periods.max(obs.period);
        }
        let mut period_counts = vec![0usize; t_periods];
        for obs in &observations {
            period_counts[obs.period - 1] += 1;
        }
        Ok(SurveyDataset { observations, t_periods, period_counts })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn t_periods(&self) -> usize {
        self.t_periods
    }

    pub fn period_counts(&self) -> &[usize] {
        &self.period_counts
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_dim(&self) -> usize {
        self.observations[0].covariates.len()
    }

    pub fn sites(&self) -> Vec<[f64; 2]> {
        self.observations.iter().map(|o| o.location).collect()
    }

    /// Split into observations with period <= t_cut and the rest, keeping
    /// order; used for hold-out validation on the last period(s).
    /// Swaps the count column in place, keeping every other field. The new
    /// counts must cover the observations one to one.
    pub fn replace_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.observations.len() {
            return Err(StzipError::input(format!(
                "count vector has length {}, dataset has {} observations",
                counts.len(),
                self.observations.len()
            )));
        }
        for (obs, &c) in self.observations.iter_mut().zip(counts) {
            obs.count = c;
        }
        Ok(())
    }

    pub fn split_at_period(&self, t_cut: usize) -> (Vec<Observation>, Vec<Observation>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for obs in &self.observations {
            if obs.period <= t_cut {
                train.push(obs.clone());
            } else {
                test.push(obs.clone());
            }
        }
        (train, test)
    }
}

/// Per-observation latent variables.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// Structural-zero indicator.
    pub z: Vec<bool>,
    /// Probit latent variable; positive exactly where z is set.
    pub g: Vec<f64>,
    /// Polya-gamma latent variable; meaningful only where z is false.
    pub omega: Vec<f64>,
}

/// All model parameters for one chain.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub mu_u: DVector<f64>,
    pub mu_xi: DVector<f64>,
    /// Time effect in the intensity, v[0] pinned to 0.
    pub v: Vec<f64>,
    /// Time effect in the zero layer, eta[0] pinned to 0.
    pub eta: Vec<f64>,
    pub tau_u: f64,
    pub tau_xi: f64,
    pub sigma2_v: f64,
    pub sigma2_eta: f64,
    /// Indices into the shared bandwidth grid.
    pub h_u_index: usize,
    pub h_xi_index: usize,
    /// Spline shrinkage precisions (left at 1 when no spline is configured).
    pub tau_p1: f64,
    pub tau_p2: f64,
    pub latent: LatentState,
}

impl ModelState {
    /// Neutral starting state: zero coefficients and effects, unit variances
    /// and precisions, the middle bandwidth, z set exactly on the observed
    /// zeros, and g drawn from its half-normal conditional given that z.
    pub fn initial<R: Rng + ?Sized>(
        rng: &mut R,
        covariate_dim: usize,
        knot_count: usize,
        t_periods: usize,
        grid_len: usize,
        counts: &[u64],
    ) -> Self {
        let mid = (grid_len - 1) / 2;
        let z: Vec<bool> = counts.iter().map(|&y| y == 0).collect();
        let g = z
            .iter()
            .map(|&zi| {
                if zi {
                    sample_normal_positive(rng, 0.0)
                } else {
                    sample_normal_negative(rng, 0.0)
                }
            })
            .collect();
        let omega = vec![1.0; counts.len()];
        ModelState {
            beta: DVector::zeros(covariate_dim),
            gamma: DVector::zeros(covariate_dim),
            mu_u: DVector::zeros(knot_count),
            mu_xi: DVector::zeros(knot_count),
            v: vec![0.0; t_periods],
            eta: vec![0.0; t_periods],
            tau_u: 1.0,
            tau_xi: 1.0,
            sigma2_v: 1.0,
            sigma2_eta: 1.0,
            h_u_index: mid,
            h_xi_index: mid,
            tau_p1: 1.0,
            tau_p2: 1.0,
            latent: LatentState { z, g, omega },
        }
    }
}

fn check_dims(state_dim: usize, obs: &Observation, proj_len: usize, effect_dim: usize, t: usize) -> Result<()> {
    if obs.covariates.len() != state_dim {
        return Err(StzipError::Config(format!(
            "covariate dimension {} does not match coefficient dimension {state_dim}",
            obs.covariates.len()
        )));
    }
    if proj_len != effect_dim {
        return Err(StzipError::Config(format!(
            "projector row length {proj_len} does not match knot-effect dimension {effect_dim}"
        )));
    }
    if obs.period == 0 || obs.period > t {
        return Err(StzipError::Config(format!(
            "period {} outside the fitted range 1..={t}",
            obs.period
        )));
    }
    Ok(())
}

/// x'beta + u(s) + v_t with u(s) = d(s)' mu_u.
pub fn linear_predictor_intensity(
    state: &ModelState,
    obs: &Observation,
    projector_row_u: &[f64],
) -> Result<f64> {
    check_dims(state.beta.len(), obs, projector_row_u.len(), state.mu_u.len(), state.v.len())?;
    let mut acc = 0.0;
    for (x, b) in obs.covariates.iter().zip(state.beta.iter()) {
        acc += x * b;
    }
    for (d, m) in projector_row_u.iter().zip(state.mu_u.iter()) {
        acc += d * m;
    }
    Ok(acc + state.v[obs.period - 1])
}

/// x'gamma + xi(s) + eta_t with xi(s) = d(s)' mu_xi.
pub fn linear_predictor_zero(
    state: &ModelState,
    obs: &Observation,
    projector_row_xi: &[f64],
) -> Result<f64> {
    check_dims(state.gamma.len(), obs, projector_row_xi.len(), state.mu_xi.len(), state.eta.len())?;
    let mut acc = 0.0;
    for (x, g) in obs.covariates.iter().zip(state.gamma.iter()) {
        acc += x * g;
    }
    for (d, m) in projector_row_xi.iter().zip(state.mu_xi.iter()) {
        acc += d * m;
    }
    Ok(acc + state.eta[obs.period - 1])
}

/// Marginal mean {1 - Phi(m_g)} lambda and zero probability
/// Phi(m_g) + {1 - Phi(m_g)} e^{-lambda} after integrating the latent z out.
pub fn marginal_mean_and_zero_prob(
    state: &ModelState,
    obs: &Observation,
    projector_row_u: &[f64],
    projector_row_xi: &[f64],
) -> Result<(f64, f64)> {
    let m_lambda = linear_predictor_intensity(state, obs, projector_row_u)?;
    let m_g = linear_predictor_zero(state, obs, projector_row_xi)?;
    Ok(mean_zero_prob_from_predictors(m_lambda, m_g))
}

/// Same marginals straight from the two linear predictors.
pub fn mean_zero_prob_from_predictors(m_lambda: f64, m_g: f64) -> (f64, f64) {
    let lambda = m_lambda.exp();
    let phi = normal_cdf(m_g);
    let mean = (1.0 - phi) * lambda;
    let p0 = (phi + (1.0 - phi) * (-lambda).exp()).clamp(0.0, 1.0);
    (mean, p0)
}

/// Scalar-or-per-coordinate prior variance for a coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorVariance {
    Scalar(f64),
    PerCoefficient(Vec<f64>),
}

impl Default for PriorVariance {
    fn default() -> Self {
        PriorVariance::Scalar(100.0)
    }
}

impl PriorVariance {
    /// Expand to a length-p variance diagonal.
    pub fn diagonal(&self, p: usize) -> Result<DVector<f64>> {
        match self {
            PriorVariance::Scalar(v) => {
                if !(*v > 0.0) {
                    return Err(StzipError::Config(format!("prior variance must be positive, got {v}")));
                }
                Ok(DVector::from_element(p, *v))
            }
            PriorVariance::PerCoefficient(vs) => {
                if vs.len() != p {
                    return Err(StzipError::Config(format!(
                        "prior variance vector has length {}, expected {p}",
                        vs.len()
                    )));
                }
                if vs.iter().any(|v| !(*v > 0.0)) {
                    return Err(StzipError::Config("prior variances must all be positive".into()));
                }
                Ok(DVector::from_row_slice(vs))
            }
        }
    }

    /// Shape-independent checks, usable before the coefficient dimension is
    /// known. `diagonal` repeats the positivity check with the length known.
    fn check_entries(&self, name: &str) -> Result<()> {
        let entries = match self {
            PriorVariance::Scalar(v) => std::slice::from_ref(v),
            PriorVariance::PerCoefficient(vs) => vs.as_slice(),
        };
        if entries.is_empty() {
            return Err(StzipError::Config(format!("{name} must not be empty")));
        }
        if entries.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(StzipError::Config(format!(
                "{name} entries must be positive and finite"
            )));
        }
        Ok(())
    }
}

fn default_d() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e4
}
fn default_knot_count() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcControls {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Record per-observation intensities in the draws.
    pub store_lambda: bool,
    /// Record per-observation probit latents in the draws.
    pub store_g: bool,
}

impl Default for McmcControls {
    fn default() -> Self {
        McmcControls {
            iterations: 45_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            store_lambda: false,
            store_g: false,
        }
    }
}

/// Spline expansion of one covariate column, when the nonparametric variant
/// is wanted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineModelConfig {
    pub q: usize,
    /// Interior knots in (0,1); evenly spaced tenths when absent.
    pub knots: Option<Vec<f64>>,
    /// 0-based index among the non-intercept covariate columns to expand.
    pub input_column: usize,
}

impl Default for SplineModelConfig {
    fn default() -> Self {
        SplineModelConfig { q: 2, knots: None, input_column: 0 }
    }
}

/// Priors, surrogate shape, bandwidth grid, and MCMC controls. Every field
/// has a default, so an empty JSON object is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub beta_prior_variance: PriorVariance,
    pub gamma_prior_variance: PriorVariance,
    pub d_tau_u: f64,
    pub d_tau_xi: f64,
    pub d_sigma_v: f64,
    pub d_sigma_eta: f64,
    pub d_tau_p: f64,
    pub delta: f64,
    /// Candidate bandwidths; when absent, a 10-point grid is spanned from
    /// the knot layout at fit time.
    pub bandwidth_grid: Option<Vec<f64>>,
    /// Prior weights over the grid; uniform when absent.
    pub bandwidth_weights: Option<Vec<f64>>,
    pub knot_count: usize,
    pub mcmc: McmcControls,
    pub spline: Option<SplineModelConfig>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta_prior_variance: PriorVariance::default(),
            gamma_prior_variance: PriorVariance::default(),
            d_tau_u: default_d(),
            d_tau_xi: default_d(),
            d_sigma_v: default_d(),
            d_sigma_eta: default_d(),
            d_tau_p: default_d(),
            delta: default_delta(),
            bandwidth_grid: None,
            bandwidth_weights: None,
            knot_count: default_knot_count(),
            mcmc: McmcControls::default(),
            spline: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("d_tau_u", self.d_tau_u),
            ("d_tau_xi", self.d_tau_xi),
            ("d_sigma_v", self.d_sigma_v),
            ("d_sigma_eta", self.d_sigma_eta),
            ("d_tau_p", self.d_tau_p),
        ] {
            if !(d > 0.0) || !d.is_finite() {
                return Err(StzipError::Config(format!("{name} must be positive, got {d}")));
            }
        }
        if !self.delta.is_finite() || !(self.delta >= 1e3) {
            return Err(StzipError::Config(format!(
                "delta must be finite and at least 1e3 for the surrogate approximation regime, got {}",
                self.delta
            )));
        }
        self.beta_prior_variance.check_entries("beta prior variance")?;
        self.gamma_prior_variance.check_entries("gamma prior variance")?;
        if let Some(grid) = &self.bandwidth_grid {
            if grid.is_empty() {
                return Err(StzipError::Config("bandwidth grid must not be empty".into()));
            }
            if grid.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                return Err(StzipError::Config("bandwidth grid entries must be positive".into()));
            }
            if let Some(w) = &self.bandwidth_weights {
                if w.len() != grid.len() {
                    return Err(StzipError::Config(format!(
                        "bandwidth weights length {} does not match grid length {}",
                        w.len(),
                        grid.len()
                    )));
                }
                if w.iter().any(|x| !(*x >= 0.0)) {
                    return Err(StzipError::Config("bandwidth weights must be non-negative".into()));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-8 {
                    return Err(StzipError::Config(format!(
                        "bandwidth weights must sum to 1, got {total}"
                    )));
                }
            }
        } else if self.bandwidth_weights.is_some() {
            return Err(StzipError::Config(
                "bandwidth weights were given without an explicit grid".into(),
            ));
        }
        if self.knot_count == 0 {
            return Err(StzipError::Config("knot count must be positive".into()));
        }
        if self.mcmc.iterations <= self.mcmc.burn_in {
            return Err(StzipError::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.mcmc.iterations, self.mcmc.burn_in
            )));
        }
        if self.mcmc.thin == 0 {
            return Err(StzipError::Config("thinning interval must be at least 1".into()));
        }
        if let Some(s) = &self.spline {
            if s.q < 1 {
                return Err(StzipError::Config("spline degree must be at least 1".into()));
            }
        }
        Ok(())
    }
}
