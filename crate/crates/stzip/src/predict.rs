//! Posterior prediction, predictive loss, and hold-out error metrics.
//!
//! Every stored draw defines a complete parameter set, so prediction at a
//! point is the closed-form expected count and zero probability evaluated
//! per draw and then reduced across draws. Periods beyond the fitted range
//! use the walk's conditional mean by default; sampling fresh increments
//! per draw is available for honest predictive spread.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{mean_zero_prob_from_predictors, SurveyDataset};
use crate::error::{Result, StzipError};
use crate::io::{LatticeSpec, SurfaceRow};
use crate::kernel::{KnotKernel, KnotSet};
use crate::math;
use crate::sampler::{ModelKind, PosteriorDraws};

/// One place to evaluate predictions at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub location: [f64; 2],
    /// 1-based period; values beyond the fitted range extrapolate the walks.
    pub period: usize,
    pub covariates: Vec<f64>,
}

/// A batch of prediction points sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub points: Vec<PredictionPoint>,
}

impl PredictionGrid {
    pub fn from_points(points: Vec<PredictionPoint>) -> Self {
        PredictionGrid { points }
    }

    /// Every lattice site at one period with one shared covariate row.
    pub fn from_lattice(spec: &LatticeSpec, period: usize, covariates: Vec<f64>) -> Self {
        let points = spec
            .points()
            .into_iter()
            .map(|location| PredictionPoint {
                location,
                period,
                covariates: covariates.clone(),
            })
            .collect();
        PredictionGrid { points }
    }

    /// The observation rows of a dataset as prediction points.
    pub fn from_dataset(data: &SurveyDataset) -> Self {
        let points = data
            .observations()
            .iter()
            .map(|o| PredictionPoint {
                location: o.location,
                period: o.period,
                covariates: o.covariates.clone(),
            })
            .collect();
        PredictionGrid { points }
    }

    pub fn validate(&self, covariate_dim: usize) -> Result<()> {
        for (j, pt) in self.points.iter().enumerate() {
            if pt.covariates.len() != covariate_dim {
                return Err(StzipError::input_at(
                    format!(
                        "prediction point has {} covariates, the fit used {covariate_dim}",
                        pt.covariates.len()
                    ),
                    j + 1,
                ));
            }
            if pt.period == 0 {
                return Err(StzipError::input_at("period indices are 1-based", j + 1));
            }
            if !(pt.location[0].is_finite() && pt.location[1].is_finite())
                || pt.covariates.iter().any(|c| !c.is_finite())
            {
                return Err(StzipError::input_at("non-finite prediction point", j + 1));
            }
        }
        Ok(())
    }
}

/// Controls shared by the prediction entry points.
#[derive(Debug, Clone)]
pub struct PredictOptions {
    /// Use every draw (1) or every k-th draw.
    pub draw_stride: usize,
    /// Extrapolated periods: sample fresh walk increments per draw instead
    /// of carrying the last level forward.
    pub sample_future_walk: bool,
    /// Seed for replicate simulation and sampled future increments.
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            draw_stride: 1,
            sample_future_walk: false,
            seed: 1,
        }
    }
}

/// Comparison record for one fitted model on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub ppl: f64,
    pub ppl_g: f64,
    pub ppl_p: f64,
    pub mae: f64,
    pub mape1: f64,
    pub mape2: f64,
    /// False when the test split has no positive counts, in which case
    /// `mape2` is reported as zero by convention.
    pub mape2_defined: bool,
    pub n_test: usize,
    pub n_positive: usize,
}

/// Hold-out error fragment shared by scores and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors {
    pub mae: f64,
    pub mape1: f64,
    pub mape2: f64,
    pub mape2_defined: bool,
    pub n_test: usize,
    pub n_positive: usize,
}

/// Mean absolute error and the two relative variants, exactly as displayed:
/// MAE averages |y - est|, the first relative form divides by y + 1 over
/// all points, the second divides by y over the positive counts only.
pub fn validation_errors(estimates: &[f64], counts: &[u64]) -> Result<ValidationErrors> {
    if estimates.is_empty() {
        return Err(StzipError::input("validation needs at least one test point"));
    }
    if estimates.len() != counts.len() {
        return Err(StzipError::input(format!(
            "got {} estimates for {} test counts",
            estimates.len(),
            counts.len()
        )));
    }
    let m = estimates.len() as f64;
    let mut abs_sum = 0.0;
    let mut rel1_sum = 0.0;
    let mut rel2_sum = 0.0;
    let mut n_positive = 0usize;
    for (&est, &y) in estimates.iter().zip(counts) {
        let yf = y as f64;
        let abs = (yf - est).abs();
        abs_sum += abs;
        rel1_sum += abs / (yf + 1.0);
        if y > 0 {
            n_positive += 1;
            rel2_sum += abs / yf;
        }
    }
    let mape2_defined = n_positive > 0;
    Ok(ValidationErrors {
        mae: abs_sum / m,
        mape1: rel1_sum / m,
        mape2: if mape2_defined {
            rel2_sum / n_positive as f64
        } else {
            0.0
        },
        mape2_defined,
        n_test: estimates.len(),
        n_positive,
    })
}

// ---------------------------------------------------------------------------
// chain access
// ---------------------------------------------------------------------------

/// Borrowed, column-resolved view of a draw file.
struct ChainView<'a> {
    model: ModelKind,
    t_periods: usize,
    beta: Vec<&'a [f64]>,
    gamma: Vec<&'a [f64]>,
    mu_u: Vec<&'a [f64]>,
    mu_xi: Vec<&'a [f64]>,
    v: Vec<&'a [f64]>,
    eta: Vec<&'a [f64]>,
    h_u_index: Vec<usize>,
    h_xi_index: Vec<usize>,
    sigma2_v: Option<&'a [f64]>,
    sigma2_eta: Option<&'a [f64]>,
    draw_ids: Vec<usize>,
}

fn resolve_grid_indices(values: &[f64], grid: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&h| {
            grid.iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| (*a - h).abs().total_cmp(&(*b - h).abs()))
                .map(|(i, _)| i)
                .ok_or_else(|| StzipError::config("draw file has an empty bandwidth grid"))
        })
        .collect()
}

impl<'a> ChainView<'a> {
    fn new(draws: &'a PosteriorDraws, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(StzipError::config("draw stride must be at least 1"));
        }
        let model = draws.model()?;
        let meta = &draws.meta;
        let beta = draws.group("beta");
        if beta.len() != meta.covariate_dim {
            return Err(StzipError::config(format!(
                "draw file has {} intensity coefficients, metadata says {}",
                beta.len(),
                meta.covariate_dim
            )));
        }
        let gamma = if model.has_zero_layer() {
            let g = draws.group("gamma");
            if g.len() != meta.covariate_dim {
                return Err(StzipError::config(
                    "probit coefficient columns do not match the covariate dimension",
                ));
            }
            g
        } else {
            Vec::new()
        };
        let (mu_u, mu_xi, v, eta, h_u_index, h_xi_index, sigma2_v, sigma2_eta) =
            if model.has_random_effects() {
                let mu_u = draws.group("mu_u");
                if mu_u.len() != meta.knot_count {
                    return Err(StzipError::config(
                        "intensity-field columns do not match the knot count",
                    ));
                }
                let v = draws.period_group("v", meta.t_periods)?;
                let h_u = resolve_grid_indices(draws.column("h_u")?, &meta.bandwidth_grid)?;
                let sigma2_v = Some(draws.column("sigma2_v")?);
                if model.has_zero_layer() {
                    let mu_xi = draws.group("mu_xi");
                    if mu_xi.len() != meta.knot_count {
                        return Err(StzipError::config(
                            "zero-layer field columns do not match the knot count",
                        ));
                    }
                    let eta = draws.period_group("eta", meta.t_periods)?;
                    let h_xi =
                        resolve_grid_indices(draws.column("h_xi")?, &meta.bandwidth_grid)?;
                    let sigma2_eta = Some(draws.column("sigma2_eta")?);
                    (mu_u, mu_xi, v, eta, h_u, h_xi, sigma2_v, sigma2_eta)
                } else {
                    (mu_u, Vec::new(), v, Vec::new(), h_u, Vec::new(), sigma2_v, None)
                }
            } else {
                (
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    None,
                    None,
                )
            };
        let total = draws.draw_count();
        let draw_ids: Vec<usize> = (0..total).step_by(stride).collect();
        if draw_ids.is_empty() {
            return Err(StzipError::config("draw file is empty"));
        }
        Ok(ChainView {
            model,
            t_periods: meta.t_periods,
            beta,
            gamma,
            mu_u,
            mu_xi,
            v,
            eta,
            h_u_index,
            h_xi_index,
            sigma2_v,
            sigma2_eta,
            draw_ids,
        })
    }

    fn used_draws(&self) -> usize {
        self.draw_ids.len()
    }

    /// Walk level for a possibly extrapolated period: the stored level
    /// inside the fitted range, the last level plus any sampled increments
    /// beyond it.
    fn walk_level(levels: &[&'a [f64]], draw: usize, period: usize, future: &[f64]) -> f64 {
        if levels.is_empty() {
            return 0.0;
        }
        let t_fit = levels.len();
        if period <= t_fit {
            levels[period - 1][draw]
        } else {
            levels[t_fit - 1][draw] + future.iter().take(period - t_fit).sum::<f64>()
        }
    }
}

/// Projector rows at a fixed site list, one matrix per candidate bandwidth.
struct SiteProjectors {
    per_h: Vec<DMatrix<f64>>,
}

impl SiteProjectors {
    fn build(knots: Option<&KnotSet>, grid: &[f64], sites: &[[f64; 2]]) -> Result<Self> {
        let mut per_h = Vec::new();
        if let Some(knots) = knots {
            for &h in grid {
                let kernel = KnotKernel::new(knots, h)?;
                per_h.push(kernel.projector_rows(sites));
            }
        }
        Ok(SiteProjectors { per_h })
    }

    fn field_value(&self, h_index: usize, site: usize, coeffs: &[&[f64]], draw: usize) -> f64 {
        if self.per_h.is_empty() {
            return 0.0;
        }
        let rows = &self.per_h[h_index];
        let mut acc = 0.0;
        for (m, col) in coeffs.iter().enumerate() {
            acc += rows[(site, m)] * col[draw];
        }
        acc
    }
}

/// Per-draw future-walk increments, shared across all points of a draw.
struct FutureWalks {
    /// Indexed by draw id; each entry holds increments for periods
    /// T+1, T+2, ... up to the horizon.
    v: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
}

impl FutureWalks {
    fn empty(view: &ChainView) -> Self {
        FutureWalks {
            v: vec![Vec::new(); view.draw_ids.len()],
            eta: vec![Vec::new(); view.draw_ids.len()],
        }
    }

    fn sampled(view: &ChainView, horizon: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut v = vec![Vec::new(); view.draw_ids.len()];
        let mut eta = vec![Vec::new(); view.draw_ids.len()];
        for (k, &d) in view.draw_ids.iter().enumerate() {
            if let Some(s2) = view.sigma2_v {
                let sd = s2[d].sqrt();
                v[k] = (0..horizon)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    })
                    .collect();
            }
            if let Some(s2) = view.sigma2_eta {
                let sd = s2[d].sqrt();
                eta[k] = (0..horizon)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    })
                    .collect();
            }
        }
        FutureWalks { v, eta }
    }
}

/// Expected count and zero probability for one draw at one point.
fn point_prediction(
    view: &ChainView,
    proj_u: &SiteProjectors,
    proj_xi: &SiteProjectors,
    future: &FutureWalks,
    pt: &PredictionPoint,
    site: usize,
    k: usize,
) -> (f64, f64) {
    let d = view.draw_ids[k];
    let mut m_lambda = 0.0;
    for (a, col) in view.beta.iter().enumerate() {
        m_lambda += pt.covariates[a] * col[d];
    }
    if view.model.has_random_effects() {
        m_lambda += proj_u.field_value(view.h_u_index[d], site, &view.mu_u, d);
        m_lambda += ChainView::walk_level(&view.v, d, pt.period, &future.v[k]);
    }
    if view.model.has_zero_layer() {
        let mut m_g = 0.0;
        for (a, col) in view.gamma.iter().enumerate() {
            m_g += pt.covariates[a] * col[d];
        }
        if view.model.has_random_effects() {
            m_g += proj_xi.field_value(view.h_xi_index[d], site, &view.mu_xi, d);
            m_g += ChainView::walk_level(&view.eta, d, pt.period, &future.eta[k]);
        }
        mean_zero_prob_from_predictors(m_lambda, m_g)
    } else {
        let lambda = m_lambda.exp();
        (lambda, (-lambda).exp())
    }
}

fn prediction_context<'a>(
    draws: &'a PosteriorDraws,
    knots: Option<&KnotSet>,
    grid: &PredictionGrid,
    opts: &PredictOptions,
) -> Result<(ChainView<'a>, SiteProjectors, SiteProjectors, FutureWalks)> {
    let view = ChainView::new(draws, opts.draw_stride)?;
    grid.validate(view.beta.len())?;
    if view.model.has_random_effects() && knots.is_none() {
        return Err(StzipError::config(
            "this model predicts through its spatial fields; the fitted knot set is required",
        ));
    }
    let sites: Vec<[f64; 2]> = grid.points.iter().map(|p| p.location).collect();
    let spatial_knots = if view.model.has_random_effects() {
        knots
    } else {
        None
    };
    let proj_u = SiteProjectors::build(spatial_knots, &draws.meta.bandwidth_grid, &sites)?;
    let proj_xi = if view.model.has_zero_layer() && view.model.has_random_effects() {
        SiteProjectors::build(spatial_knots, &draws.meta.bandwidth_grid, &sites)?
    } else {
        SiteProjectors { per_h: Vec::new() }
    };
    let horizon = grid
        .points
        .iter()
        .map(|p| p.period.saturating_sub(view.t_periods))
        .max()
        .unwrap_or(0);
    let future = if opts.sample_future_walk && horizon > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(math::derive_stream_seed(opts.seed, 41));
        FutureWalks::sampled(&view, horizon, &mut rng)
    } else {
        FutureWalks::empty(&view)
    };
    Ok((view, proj_u, proj_xi, future))
}

/// Per-point, per-draw values of the expected count and the zero
/// probability, for callers that need the full predictive spread rather
/// than the reduced surface.
pub struct PredictiveDraws {
    /// Indexed `[point][used draw]`.
    pub mean_count: Vec<Vec<f64>>,
    pub p_zero: Vec<Vec<f64>>,
}

pub fn predictive_draws(
    draws: &PosteriorDraws,
    knots: Option<&KnotSet>,
    grid: &PredictionGrid,
    opts: &PredictOptions,
) -> Result<PredictiveDraws> {
    let (view, proj_u, proj_xi, future) = prediction_context(draws, knots, grid, opts)?;
    let n_draws = view.used_draws();
    let mut mean_count = Vec::with_capacity(grid.points.len());
    let mut p_zero = Vec::with_capacity(grid.points.len());
    for (site, pt) in grid.points.iter().enumerate() {
        let mut means = Vec::with_capacity(n_draws);
        let mut zeros = Vec::with_capacity(n_draws);
        for k in 0..n_draws {
            let (mean, p0) = point_prediction(&view, &proj_u, &proj_xi, &future, pt, site, k);
            means.push(mean);
            zeros.push(p0);
        }
        mean_count.push(means);
        p_zero.push(zeros);
    }
    Ok(PredictiveDraws { mean_count, p_zero })
}

/// Posterior mean and central interval of the expected count, plus the mean
/// zero probability, at every grid point.
pub fn predict_surfaces(
    draws: &PosteriorDraws,
    knots: Option<&KnotSet>,
    grid: &PredictionGrid,
    opts: &PredictOptions,
) -> Result<Vec<SurfaceRow>> {
    let (view, proj_u, proj_xi, future) = prediction_context(draws, knots, grid, opts)?;
    let n_draws = view.used_draws();
    let mut rows = Vec::with_capacity(grid.points.len());
    let mut counts = vec![0.0; n_draws];
    for (site, pt) in grid.points.iter().enumerate() {
        let mut p_zero_sum = 0.0;
        for k in 0..n_draws {
            let (mean, p0) = point_prediction(&view, &proj_u, &proj_xi, &future, pt, site, k);
            counts[k] = mean;
            p_zero_sum += p0;
        }
        let mean_count = counts.iter().sum::<f64>() / n_draws as f64;
        let mut sorted = counts.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        rows.push(SurfaceRow {
            loc_x: pt.location[0],
            loc_y: pt.location[1],
            date_index: pt.period,
            mean_count,
            p_zero: p_zero_sum / n_draws as f64,
            q025_count: math::quantile_sorted(&sorted, 0.025),
            q975_count: math::quantile_sorted(&sorted, 0.975),
        });
    }
    Ok(rows)
}

/// Posterior-mean expected count per test observation; the default point
/// prediction for hold-out scoring. With `plug_in` the parameters are first
/// averaged (bandwidths by modal grid value) and the closed form is
/// evaluated once at that point estimate.
pub fn point_predict_holdout(
    draws: &PosteriorDraws,
    knots: Option<&KnotSet>,
    test: &SurveyDataset,
    opts: &PredictOptions,
    plug_in: bool,
) -> Result<Vec<f64>> {
    let grid = PredictionGrid::from_dataset(test);
    if !plug_in {
        let rows = predict_surfaces(draws, knots, &grid, opts)?;
        return Ok(rows.into_iter().map(|r| r.mean_count).collect());
    }
    let (view, proj_u, proj_xi, _future) = prediction_context(draws, knots, &grid, opts)?;
    let mean_of = |col: &[f64]| -> f64 {
        let ids = &view.draw_ids;
        ids.iter().map(|&d| col[d]).sum::<f64>() / ids.len() as f64
    };
    let modal_index = |idx: &[usize], len: usize| -> usize {
        let mut counts = vec![0usize; len];
        for &d in &view.draw_ids {
            counts[idx[d]] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    // Collapse the chain into a single synthetic draw at the posterior mean
    // (modal bandwidth), then reuse the per-draw evaluator.
    let beta_mean: Vec<f64> = view.beta.iter().map(|c| mean_of(c)).collect();
    let gamma_mean: Vec<f64> = view.gamma.iter().map(|c| mean_of(c)).collect();
    let mu_u_mean: Vec<f64> = view.mu_u.iter().map(|c| mean_of(c)).collect();
    let mu_xi_mean: Vec<f64> = view.mu_xi.iter().map(|c| mean_of(c)).collect();
    let v_mean: Vec<f64> = view.v.iter().map(|c| mean_of(c)).collect();
    let eta_mean: Vec<f64> = view.eta.iter().map(|c| mean_of(c)).collect();
    let grid_len = draws.meta.bandwidth_grid.len().max(1);
    let h_u = if view.h_u_index.is_empty() {
        vec![0]
    } else {
        vec![modal_index(&view.h_u_index, grid_len)]
    };
    let h_xi = if view.h_xi_index.is_empty() {
        vec![0]
    } else {
        vec![modal_index(&view.h_xi_index, grid_len)]
    };
    let collapsed = ChainView {
        model: view.model,
        t_periods: view.t_periods,
        beta: beta_mean.iter().map(std::slice::from_ref).collect(),
        gamma: gamma_mean.iter().map(std::slice::from_ref).collect(),
        mu_u: mu_u_mean.iter().map(std::slice::from_ref).collect(),
        mu_xi: mu_xi_mean.iter().map(std::slice::from_ref).collect(),
        v: v_mean.iter().map(std::slice::from_ref).collect(),
        eta: eta_mean.iter().map(std::slice::from_ref).collect(),
        h_u_index: h_u,
        h_xi_index: h_xi,
        sigma2_v: None,
        sigma2_eta: None,
        draw_ids: vec![0],
    };
    let flat = FutureWalks::empty(&collapsed);
    Ok(grid
        .points
        .iter()
        .enumerate()
        .map(|(site, pt)| {
            point_prediction(&collapsed, &proj_u, &proj_xi, &flat, pt, site, 0).0
        })
        .collect())
}

/// Squared-error posterior predictive loss: one replicate per stored draw,
/// G is the squared distance between data and replicate means, P the summed
/// replicate variances, and the loss is their sum.
pub fn posterior_predictive_loss(
    draws: &PosteriorDraws,
    knots: Option<&KnotSet>,
    data: &SurveyDataset,
    opts: &PredictOptions,
) -> Result<(f64, f64, f64)> {
    let grid = PredictionGrid::from_dataset(data);
    let (view, proj_u, proj_xi, future) = prediction_context(draws, knots, &grid, opts)?;
    let n_draws = view.used_draws();
    if n_draws < 2 {
        return Err(StzipError::config(
            "predictive loss needs at least two stored draws",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(math::derive_stream_seed(opts.seed, 43));
    let mut g_term = 0.0;
    let mut p_term = 0.0;
    for (site, (pt, obs)) in grid
        .points
        .iter()
        .zip(data.observations())
        .enumerate()
    {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..n_draws {
            let d = view.draw_ids[k];
            let mut m_lambda = 0.0;
            for (a, col) in view.beta.iter().enumerate() {
                m_lambda += pt.covariates[a] * col[d];
            }
            if view.model.has_random_effects() {
                m_lambda += proj_u.field_value(view.h_u_index[d], site, &view.mu_u, d);
                m_lambda += ChainView::walk_level(&view.v, d, pt.period, &future.v[k]);
            }
            let structural = if view.model.has_zero_layer() {
                let mut m_g = 0.0;
                for (a, col) in view.gamma.iter().enumerate() {
                    m_g += pt.covariates[a] * col[d];
                }
                if view.model.has_random_effects() {
                    m_g += proj_xi.field_value(view.h_xi_index[d], site, &view.mu_xi, d);
                    m_g += ChainView::walk_level(&view.eta, d, pt.period, &future.eta[k]);
                }
                rng.random::<f64>() < math::normal_cdf(m_g)
            } else {
                false
            };
            let y_rep = if structural {
                0.0
            } else {
                let lambda = m_lambda.exp();
                Poisson::new(lambda)
                    .map_err(|e| {
                        StzipError::numerical(
                            "predictive_loss",
                            format!("replicate intensity {lambda} rejected: {e}"),
                        )
                    })?
                    .sample(&mut rng)
            };
            sum += y_rep;
            sumsq += y_rep * y_rep;
        }
        let n = n_draws as f64;
        let mean = sum / n;
        let var = (sumsq - n * mean * mean).max(0.0) / (n - 1.0);
        let diff = obs.count as f64 - mean;
        g_term += diff * diff;
        p_term += var;
    }
    Ok((g_term + p_term, g_term, p_term))
}

/// Bundles predictive loss and hold-out errors into one comparison record.
pub fn model_score(
    model: &str,
    ppl: (f64, f64, f64),
    errors: &ValidationErrors,
) -> ModelScore {
    ModelScore {
        model: model.to_string(),
        ppl: ppl.0,
        ppl_g: ppl.1,
        ppl_p: ppl.2,
        mae: errors.mae,
        mape1: errors.mape1,
        mape2: errors.mape2,
        mape2_defined: errors.mape2_defined,
        n_test: errors.n_test,
        n_positive: errors.n_positive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::io::NamedColumns;
    use crate::sampler::DrawsMeta;
    use approx::assert_relative_eq;

    fn manual_draws(
        model: &str,
        t_periods: usize,
        covariate_dim: usize,
        knot_count: usize,
        grid: Vec<f64>,
        cols: Vec<(&str, Vec<f64>)>,
    ) -> PosteriorDraws {
        let draw_count = cols.first().map_or(0, |c| c.1.len());
        let names = cols.iter().map(|c| c.0.to_string()).collect();
        let columns = cols.into_iter().map(|c| c.1).collect();
        PosteriorDraws {
            meta: DrawsMeta {
                model: model.into(),
                t_periods,
                covariate_dim,
                knot_count,
                delta: 1e4,
                bandwidth_grid: grid,
                spline_span: None,
                draw_count,
                seed: 0,
            },
            columns: NamedColumns { names, columns },
        }
    }

    fn single_draw_full() -> (PosteriorDraws, KnotSet) {
        let knots = KnotSet::from_points(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let draws = manual_draws(
            "stzip",
            2,
            2,
            2,
            vec![0.6, 1.2],
            vec![
                ("beta_0", vec![0.2]),
                ("beta_1", vec![0.4]),
                ("gamma_0", vec![-0.5]),
                ("gamma_1", vec![0.3]),
                ("mu_u_0", vec![0.3]),
                ("mu_u_1", vec![-0.2]),
                ("v_1", vec![0.0]),
                ("v_2", vec![0.25]),
                ("h_u", vec![0.6]),
                ("tau_u", vec![1.0]),
                ("sigma2_v", vec![1.0]),
                ("mu_xi_0", vec![0.1]),
                ("mu_xi_1", vec![0.2]),
                ("eta_1", vec![0.0]),
                ("eta_2", vec![-0.15]),
                ("h_xi", vec![1.2]),
                ("tau_xi", vec![1.0]),
                ("sigma2_eta", vec![1.0]),
            ],
        );
        (draws, knots)
    }

    fn closed_form_at(
        knots: &KnotSet,
        point: &PredictionPoint,
        h_u: f64,
        h_xi: f64,
        mu_u: &[f64],
        mu_xi: &[f64],
        beta: &[f64],
        gamma: &[f64],
        v_t: f64,
        eta_t: f64,
    ) -> (f64, f64) {
        let row_u = KnotKernel::new(knots, h_u)
            .unwrap()
            .projector_rows(&[point.location]);
        let row_xi = KnotKernel::new(knots, h_xi)
            .unwrap()
            .projector_rows(&[point.location]);
        let u: f64 = (0..mu_u.len()).map(|m| row_u[(0, m)] * mu_u[m]).sum();
        let xi: f64 = (0..mu_xi.len()).map(|m| row_xi[(0, m)] * mu_xi[m]).sum();
        let xb: f64 = point
            .covariates
            .iter()
            .zip(beta)
            .map(|(a, b)| a * b)
            .sum();
        let xg: f64 = point
            .covariates
            .iter()
            .zip(gamma)
            .map(|(a, b)| a * b)
            .sum();
        mean_zero_prob_from_predictors(xb + u + v_t, xg + xi + eta_t)
    }

    #[test]
    fn single_draw_surface_matches_the_closed_form() {
        let (draws, knots) = single_draw_full();
        let pt = PredictionPoint {
            location: [0.4, 0.1],
            period: 2,
            covariates: vec![1.0, 0.7],
        };
        let grid = PredictionGrid::from_points(vec![pt.clone()]);
        let rows = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        assert_eq!(rows.len(), 1);
        let (mean, p0) = closed_form_at(
            &knots,
            &pt,
            0.6,
            1.2,
            &[0.3, -0.2],
            &[0.1, 0.2],
            &[0.2, 0.4],
            &[-0.5, 0.3],
            0.25,
            -0.15,
        );
        assert_relative_eq!(rows[0].mean_count, mean, max_relative = 1e-12);
        assert_relative_eq!(rows[0].p_zero, p0, max_relative = 1e-12);
        assert_eq!(rows[0].q025_count, rows[0].mean_count);
        assert_eq!(rows[0].q975_count, rows[0].mean_count);
    }

    #[test]
    fn far_point_reduces_to_covariate_and_time_effects() {
        let (draws, knots) = single_draw_full();
        let pt = PredictionPoint {
            location: [60.0, -60.0],
            period: 1,
            covariates: vec![1.0, -0.4],
        };
        let grid = PredictionGrid::from_points(vec![pt.clone()]);
        let rows = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        let (mean, p0) =
            mean_zero_prob_from_predictors(0.2 + 0.4 * -0.4, -0.5 + 0.3 * -0.4);
        assert_relative_eq!(rows[0].mean_count, mean, max_relative = 1e-9);
        assert_relative_eq!(rows[0].p_zero, p0, max_relative = 1e-9);
    }

    #[test]
    fn zeroed_fields_leave_the_regression_prediction_at_a_knot() {
        let knots = KnotSet::from_points(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let draws = manual_draws(
            "stzip",
            1,
            1,
            2,
            vec![0.8],
            vec![
                ("beta_0", vec![0.9, 0.9]),
                ("gamma_0", vec![-0.2, -0.2]),
                ("mu_u_0", vec![0.0, 0.0]),
                ("mu_u_1", vec![0.0, 0.0]),
                ("v_1", vec![0.0, 0.0]),
                ("h_u", vec![0.8, 0.8]),
                ("tau_u", vec![1.0, 1.0]),
                ("sigma2_v", vec![1.0, 1.0]),
                ("mu_xi_0", vec![0.0, 0.0]),
                ("mu_xi_1", vec![0.0, 0.0]),
                ("eta_1", vec![0.0, 0.0]),
                ("h_xi", vec![0.8, 0.8]),
                ("tau_xi", vec![1.0, 1.0]),
                ("sigma2_eta", vec![1.0, 1.0]),
            ],
        );
        let pt = PredictionPoint {
            location: [0.0, 0.0],
            period: 1,
            covariates: vec![1.0],
        };
        let grid = PredictionGrid::from_points(vec![pt]);
        let rows = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        let (mean, p0) = mean_zero_prob_from_predictors(0.9, -0.2);
        assert_relative_eq!(rows[0].mean_count, mean, max_relative = 1e-12);
        assert_relative_eq!(rows[0].p_zero, p0, max_relative = 1e-12);
    }

    #[test]
    fn future_periods_carry_the_last_walk_level_forward() {
        let (draws, knots) = single_draw_full();
        let base = PredictionPoint {
            location: [0.3, 0.2],
            period: 2,
            covariates: vec![1.0, 0.1],
        };
        let ahead = PredictionPoint {
            period: 5,
            ..base.clone()
        };
        let grid = PredictionGrid::from_points(vec![base, ahead]);
        let rows = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        assert_relative_eq!(rows[0].mean_count, rows[1].mean_count, max_relative = 1e-12);
        assert_relative_eq!(rows[0].p_zero, rows[1].p_zero, max_relative = 1e-12);
    }

    #[test]
    fn sampled_future_walk_with_negligible_variance_matches_carry_forward() {
        let (mut draws, knots) = single_draw_full();
        for (name, col) in draws
            .columns
            .names
            .iter()
            .zip(draws.columns.columns.iter_mut())
        {
            if name == "sigma2_v" || name == "sigma2_eta" {
                col[0] = 1e-30;
            }
        }
        let pt = PredictionPoint {
            location: [0.3, 0.2],
            period: 6,
            covariates: vec![1.0, 0.1],
        };
        let grid = PredictionGrid::from_points(vec![pt]);
        let carried = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        let sampled = predict_surfaces(
            &draws,
            Some(&knots),
            &grid,
            &PredictOptions {
                sample_future_walk: true,
                ..PredictOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(
            carried[0].mean_count,
            sampled[0].mean_count,
            max_relative = 1e-6
        );
    }

    #[test]
    fn empty_grid_gives_empty_surface() {
        let (draws, knots) = single_draw_full();
        let rows = predict_surfaces(
            &draws,
            Some(&knots),
            &PredictionGrid::from_points(Vec::new()),
            &PredictOptions::default(),
        )
        .unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn covariate_mismatch_is_reported_with_the_point_number() {
        let (draws, knots) = single_draw_full();
        let grid = PredictionGrid::from_points(vec![PredictionPoint {
            location: [0.0, 0.0],
            period: 1,
            covariates: vec![1.0],
        }]);
        let err = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn holdout_means_match_the_surface_means() {
        let (draws, knots) = single_draw_full();
        let test = SurveyDataset::new(vec![
            Observation {
                period: 2,
                location: [0.2, 0.4],
                count: 3,
                covariates: vec![1.0, -0.2],
            },
            Observation {
                period: 3,
                location: [0.8, -0.1],
                count: 0,
                covariates: vec![1.0, 0.5],
            },
        ])
        .unwrap();
        let est = point_predict_holdout(
            &draws,
            Some(&knots),
            &test,
            &PredictOptions::default(),
            false,
        )
        .unwrap();
        let rows = predict_surfaces(
            &draws,
            Some(&knots),
            &PredictionGrid::from_dataset(&test),
            &PredictOptions::default(),
        )
        .unwrap();
        assert_eq!(est.len(), 2);
        for (e, r) in est.iter().zip(&rows) {
            assert_relative_eq!(*e, r.mean_count, max_relative = 1e-12);
        }
    }

    #[test]
    fn plug_in_equals_the_posterior_mean_path_for_a_constant_chain() {
        // Every draw identical: averaging parameters and averaging
        // predictions agree exactly.
        let knots = KnotSet::from_points(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let rep = |x: f64| vec![x; 3];
        let draws = manual_draws(
            "stzip",
            2,
            2,
            2,
            vec![0.6, 1.2],
            vec![
                ("beta_0", rep(0.2)),
                ("beta_1", rep(0.4)),
                ("gamma_0", rep(-0.5)),
                ("gamma_1", rep(0.3)),
                ("mu_u_0", rep(0.3)),
                ("mu_u_1", rep(-0.2)),
                ("v_1", rep(0.0)),
                ("v_2", rep(0.25)),
                ("h_u", rep(0.6)),
                ("tau_u", rep(1.0)),
                ("sigma2_v", rep(1.0)),
                ("mu_xi_0", rep(0.1)),
                ("mu_xi_1", rep(0.2)),
                ("eta_1", rep(0.0)),
                ("eta_2", rep(-0.15)),
                ("h_xi", rep(1.2)),
                ("tau_xi", rep(1.0)),
                ("sigma2_eta", rep(1.0)),
            ],
        );
        let test = SurveyDataset::new(vec![Observation {
            period: 2,
            location: [0.4, 0.1],
            count: 1,
            covariates: vec![1.0, 0.7],
        }])
        .unwrap();
        let opts = PredictOptions::default();
        let posterior = point_predict_holdout(&draws, Some(&knots), &test, &opts, false).unwrap();
        let plug = point_predict_holdout(&draws, Some(&knots), &test, &opts, true).unwrap();
        assert_relative_eq!(posterior[0], plug[0], max_relative = 1e-12);
    }

    #[test]
    fn structural_certainty_gives_zero_predictive_loss() {
        // Probit intercept at 38: the structural-zero probability is one in
        // every draw, so replicates are exactly zero and so is the loss on
        // an all-zero dataset.
        let draws = manual_draws(
            "zip",
            1,
            1,
            0,
            Vec::new(),
            vec![("beta_0", vec![0.0, 0.0]), ("gamma_0", vec![38.0, 38.0])],
        );
        let data = SurveyDataset::new(vec![Observation {
            period: 1,
            location: [0.0, 0.0],
            count: 0,
            covariates: vec![1.0],
        }])
        .unwrap();
        let (ppl, g, p) =
            posterior_predictive_loss(&draws, None, &data, &PredictOptions::default()).unwrap();
        assert_eq!(ppl, 0.0);
        assert_eq!(g, 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn pure_poisson_variance_term_approaches_n_lambda() {
        let n_draws = 20_000;
        let lambda: f64 = 4.0;
        let draws = manual_draws(
            "zip",
            1,
            1,
            0,
            Vec::new(),
            vec![
                ("beta_0", vec![lambda.ln(); n_draws]),
                ("gamma_0", vec![-38.0; n_draws]),
            ],
        );
        let obs = |x: f64, y: u64| Observation {
            period: 1,
            location: [x, 0.0],
            count: y,
            covariates: vec![1.0],
        };
        let data = SurveyDataset::new(vec![
            obs(0.0, 4),
            obs(0.1, 3),
            obs(0.2, 5),
            obs(0.3, 4),
            obs(0.4, 6),
        ])
        .unwrap();
        let (ppl, g, p) =
            posterior_predictive_loss(&draws, None, &data, &PredictOptions::default()).unwrap();
        assert_relative_eq!(p, 5.0 * lambda, max_relative = 0.05);
        assert!(g >= 0.0 && p >= 0.0);
        assert_eq!(ppl, g + p);
    }

    #[test]
    fn predictive_loss_requires_two_draws() {
        let draws = manual_draws(
            "zip",
            1,
            1,
            0,
            Vec::new(),
            vec![("beta_0", vec![0.0]), ("gamma_0", vec![0.0])],
        );
        let data = SurveyDataset::new(vec![Observation {
            period: 1,
            location: [0.0, 0.0],
            count: 0,
            covariates: vec![1.0],
        }])
        .unwrap();
        assert!(
            posterior_predictive_loss(&draws, None, &data, &PredictOptions::default()).is_err()
        );
    }

    #[test]
    fn validation_error_hand_case() {
        let e = validation_errors(&[1.0, 1.0], &[0, 2]).unwrap();
        assert_eq!(e.mae, 1.0);
        assert_relative_eq!(e.mape1, 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(e.mape2, 0.5);
        assert!(e.mape2_defined);
        assert_eq!(e.n_test, 2);
        assert_eq!(e.n_positive, 1);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let e = validation_errors(&[3.0, 0.0, 7.0], &[3, 0, 7]).unwrap();
        assert_eq!((e.mae, e.mape1, e.mape2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn all_zero_test_set_flags_the_positive_only_metric() {
        let e = validation_errors(&[0.5, 0.2], &[0, 0]).unwrap();
        assert!(!e.mape2_defined);
        assert_eq!(e.mape2, 0.0);
        assert_eq!(e.n_positive, 0);
        assert!(validation_errors(&[], &[]).is_err());
        assert!(validation_errors(&[1.0], &[1, 2]).is_err());
    }

    #[test]
    fn surface_means_are_stable_under_thinning() {
        use crate::data::PriorConfig;
        use crate::sampler::{GibbsSampler, SamplerPlan};
        let mut rows = Vec::new();
        for t in 1..=3usize {
            for i in 0..6usize {
                rows.push(Observation {
                    period: t,
                    location: [-1.0 + 0.4 * i as f64, 0.3 * ((i + t) % 4) as f64],
                    count: [0, 2, 0, 1, 5, 0][(i + t) % 6],
                    covariates: vec![1.0, 0.1 * i as f64 - 0.2],
                });
            }
        }
        let data = SurveyDataset::new(rows).unwrap();
        let mut cfg: PriorConfig = serde_json::from_str("{}").unwrap();
        cfg.mcmc.iterations = 2_500;
        cfg.mcmc.burn_in = 100;
        let mut plan = SamplerPlan::from_config(ModelKind::Stzip, &cfg);
        plan.seed = 404;
        let knots = KnotSet::from_points(vec![[-0.8, 0.0], [0.0, 0.5], [0.8, 0.2]]).unwrap();
        let mut sampler =
            GibbsSampler::new(data.clone(), &cfg, plan, Some(knots.clone()), None).unwrap();
        let draws = sampler.run().unwrap();
        let grid = PredictionGrid::from_points(vec![PredictionPoint {
            location: [0.1, 0.2],
            period: 2,
            covariates: vec![1.0, 0.0],
        }]);
        let full = predict_surfaces(&draws, Some(&knots), &grid, &PredictOptions::default())
            .unwrap();
        let thinned = predict_surfaces(
            &draws,
            Some(&knots),
            &grid,
            &PredictOptions {
                draw_stride: 2,
                ..PredictOptions::default()
            },
        )
        .unwrap();
        // 1200 draws remain after thinning; the interval half-width is a
        // generous stand-in for the Monte Carlo standard error.
        let spread = (full[0].q975_count - full[0].q025_count).max(1e-3);
        let tol = 2.0 * spread / (1200.0f64).sqrt();
        assert!(
            (full[0].mean_count - thinned[0].mean_count).abs() < tol,
            "{} vs {} (tol {tol})",
            full[0].mean_count,
            thinned[0].mean_count
        );
    }

    #[test]
    fn predictive_draws_reduce_to_the_surface() {
        let (draws, knots) = single_draw_full();
        let grid = PredictionGrid::from_points(vec![PredictionPoint {
            location: [0.4, 0.1],
            period: 2,
            covariates: vec![1.0, 0.7],
        }]);
        let opts = PredictOptions::default();
        let full = predictive_draws(&draws, Some(&knots), &grid, &opts).unwrap();
        let rows = predict_surfaces(&draws, Some(&knots), &grid, &opts).unwrap();
        assert_eq!(full.mean_count.len(), 1);
        assert_eq!(full.mean_count[0].len(), 1);
        assert_relative_eq!(full.mean_count[0][0], rows[0].mean_count, max_relative = 1e-15);
        assert_relative_eq!(full.p_zero[0][0], rows[0].p_zero, max_relative = 1e-15);
    }

    #[test]
    fn lattice_grid_expands_row_major() {
        let spec = crate::io::parse_lattice_spec("0:1:0:0.5:0.5").unwrap();
        let grid = PredictionGrid::from_lattice(&spec, 2, vec![1.0, 0.0]);
        assert_eq!(grid.points.len(), 6);
        assert_eq!(grid.points[0].location, [0.0, 0.0]);
        assert_eq!(grid.points[1].location, [0.5, 0.0]);
        assert!(grid.points.iter().all(|p| p.period == 2));
    }
}
