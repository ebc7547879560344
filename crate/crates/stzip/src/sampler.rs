//! Gibbs sampler for the zero-inflated count model and its two reduced forms.
//!
//! The full model couples a log-linear intensity with spatial and temporal
//! random effects to a probit zero-inflation layer carrying its own spatial
//! and temporal effects. Conditionals for the intensity side come from a
//! negative binomial surrogate with Polya-Gamma mixing, so every block is
//! Gaussian, discrete, or gamma and the whole sweep stays conjugate.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::{ModelState, PriorConfig, SurveyDataset};
use crate::error::{Result, StzipError};
use crate::io::{FitSummary, NamedColumns, ParamSummary};
use crate::kernel::{bandwidth_grid, select_knots, KnotKernel, KnotSet};
use crate::math;
use crate::pg;

/// Which variant of the model a chain targets.
///
/// `Stp` drops the zero-inflation layer (every count is modelled by the
/// intensity alone). `Zip` drops the spatial fields and temporal walks on
/// both layers. `Stzip` is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Stzip,
    Stp,
    Zip,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Stzip => "stzip",
            ModelKind::Stp => "stp",
            ModelKind::Zip => "zip",
        }
    }

    /// The probit layer is present.
    pub fn has_zero_layer(self) -> bool {
        !matches!(self, ModelKind::Stp)
    }

    /// Spatial fields and temporal walks are present.
    pub fn has_random_effects(self) -> bool {
        !matches!(self, ModelKind::Zip)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = StzipError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stzip" => Ok(ModelKind::Stzip),
            "stp" => Ok(ModelKind::Stp),
            "zip" => Ok(ModelKind::Zip),
            other => Err(StzipError::config(format!(
                "unknown model kind {other:?}, expected stzip, stp, or zip"
            ))),
        }
    }
}

/// Run-length bookkeeping for one chain.
#[derive(Debug, Clone)]
pub struct SamplerPlan {
    pub model: ModelKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub store_lambda: bool,
    pub store_g: bool,
}

impl SamplerPlan {
    pub fn from_config(model: ModelKind, prior: &PriorConfig) -> Self {
        SamplerPlan {
            model,
            iterations: prior.mcmc.iterations,
            burn_in: prior.mcmc.burn_in,
            thin: prior.mcmc.thin,
            seed: prior.mcmc.seed,
            store_lambda: prior.mcmc.store_lambda,
            store_g: prior.mcmc.store_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(StzipError::config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(StzipError::config("thin must be at least 1"));
        }
        Ok(())
    }

    /// Number of draws a complete run stores.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Everything a consumer of a draw file needs besides the draws themselves.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DrawsMeta {
    pub model: String,
    pub t_periods: usize,
    pub covariate_dim: usize,
    pub knot_count: usize,
    pub delta: f64,
    pub bandwidth_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spline_span: Option<(usize, usize)>,
    pub draw_count: usize,
    pub seed: u64,
}

/// Stored posterior draws with one named column per scalar quantity.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub meta: DrawsMeta,
    pub columns: NamedColumns,
}

impl PosteriorDraws {
    pub fn model(&self) -> Result<ModelKind> {
        self.meta.model.parse()
    }

    pub fn draw_count(&self) -> usize {
        self.columns.rows()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .column(name)
            .ok_or_else(|| StzipError::config(format!("draw file has no column {name:?}")))
    }

    /// Columns `prefix_0, prefix_1, ...` as one slice per coefficient.
    pub fn group(&self, prefix: &str) -> Vec<&[f64]> {
        self.columns.column_group(prefix)
    }

    /// Columns `prefix_1 ..= prefix_t` (period-indexed blocks).
    pub fn period_group(&self, prefix: &str, t_periods: usize) -> Result<Vec<&[f64]>> {
        (1..=t_periods)
            .map(|t| self.column(&format!("{prefix}_{t}")))
            .collect()
    }

    /// Mean, sd, and central 95% interval for every parameter column.
    ///
    /// Per-observation columns (intensities and probit scores) are skipped;
    /// they scale with the data, not the parameter vector.
    pub fn summarize(&self) -> FitSummary {
        let mut parameters = Vec::new();
        for (name, values) in self.columns.names.iter().zip(&self.columns.columns) {
            if name.starts_with("lambda_") || name.starts_with("g_") {
                continue;
            }
            parameters.push(summarize_column(name, values));
        }
        FitSummary {
            model: self.meta.model.clone(),
            draw_count: self.draw_count(),
            parameters,
        }
    }
}

fn summarize_column(name: &str, values: &[f64]) -> ParamSummary {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    ParamSummary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        q025: math::quantile_sorted(&sorted, 0.025),
        q975: math::quantile_sorted(&sorted, 0.975),
    }
}

/// One Gibbs chain: data, resolved prior, per-bandwidth caches, and state.
pub struct GibbsSampler {
    data: SurveyDataset,
    model: ModelKind,
    plan: SamplerPlan,

    // resolved prior pieces
    delta: f64,
    log_delta: f64,
    beta_prior_var: DVector<f64>,
    gamma_prior_var: DVector<f64>,
    d_tau_u: f64,
    d_tau_xi: f64,
    d_sigma_v: f64,
    d_sigma_eta: f64,
    d_tau_p: f64,
    spline_span: Option<Range<usize>>,

    // bandwidth grid and per-candidate caches
    grid: Vec<f64>,
    grid_log_weights: Vec<f64>,
    knots: Option<KnotSet>,
    kernels: Vec<KnotKernel>,
    kernel_inverses: Vec<DMatrix<f64>>,
    projector_rows: Vec<DMatrix<f64>>,
    zero_layer_cross: Vec<DMatrix<f64>>,

    // fixed data summaries
    covariate_cross: DMatrix<f64>,
    period_of: Vec<usize>,
    period_members: Vec<Vec<usize>>,

    // per-observation caches of the current linear-predictor pieces
    xbeta: Vec<f64>,
    xgamma: Vec<f64>,
    u_site: Vec<f64>,
    xi_site: Vec<f64>,

    pub state: ModelState,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    /// Builds a chain. `knots` overrides the clustering-based default knot
    /// set; `spline_span` marks the covariate columns under the shrinkage
    /// prior (both layers share the span).
    pub fn new(
        data: SurveyDataset,
        prior: &PriorConfig,
        plan: SamplerPlan,
        knots: Option<KnotSet>,
        spline_span: Option<Range<usize>>,
    ) -> Result<Self> {
        prior.validate()?;
        plan.validate()?;
        let p = data.covariate_dim();
        let n = data.len();
        if n == 0 {
            return Err(StzipError::input("dataset has no observations"));
        }
        if let Some(span) = &spline_span {
            if span.end > p || span.start >= span.end {
                return Err(StzipError::config(format!(
                    "shrinkage span {}..{} does not fit the {p} covariate columns",
                    span.start, span.end
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

        // Spatial machinery is skipped entirely for the no-field variant.
        let (knots, grid) = if plan.model.has_random_effects() {
            let knots = match knots {
                Some(k) => k,
                None => select_knots(
                    &data.sites(),
                    prior.knot_count,
                    math::derive_stream_seed(plan.seed, 17),
                )?,
            };
            let grid = match &prior.bandwidth_grid {
                Some(g) => g.clone(),
                None => bandwidth_grid(knots.median_spacing(), 10)?,
            };
            (Some(knots), grid)
        } else {
            (None, vec![1.0])
        };
        let grid_log_weights = match &prior.bandwidth_weights {
            Some(w) => w.iter().map(|x| x.ln()).collect(),
            None => vec![-(grid.len() as f64).ln(); grid.len()],
        };
        if grid_log_weights.len() != grid.len() {
            return Err(StzipError::config(
                "bandwidth prior weights must match the grid length",
            ));
        }

        let m = knots.as_ref().map_or(0, KnotSet::len);
        let mut kernels = Vec::new();
        let mut kernel_inverses = Vec::new();
        let mut projector_rows = Vec::new();
        let mut zero_layer_cross = Vec::new();
        if let Some(knots) = &knots {
            let sites = data.sites();
            for &h in &grid {
                let kernel = KnotKernel::new(knots, h)?;
                let rows = kernel.projector_rows(&sites);
                if plan.model.has_zero_layer() {
                    zero_layer_cross.push(rows.tr_mul(&rows));
                }
                kernel_inverses.push(kernel.inverse());
                projector_rows.push(rows);
                kernels.push(kernel);
            }
        }

        let mut covariate_cross = DMatrix::zeros(p, p);
        for obs in data.observations() {
            for a in 0..p {
                for b in 0..p {
                    covariate_cross[(a, b)] += obs.covariates[a] * obs.covariates[b];
                }
            }
        }

        let period_of: Vec<usize> = data.observations().iter().map(|o| o.period - 1).collect();
        let t_periods = data.t_periods();
        let mut period_members = vec![Vec::new(); t_periods];
        for (i, &t) in period_of.iter().enumerate() {
            period_members[t].push(i);
        }

        let counts: Vec<u64> = data.observations().iter().map(|o| o.count).collect();
        let mut state = ModelState::initial(&mut rng, p, m, t_periods, grid.len(), &counts);
        if !plan.model.has_zero_layer() {
            // Reduced intensity-only model: nothing is flagged as a
            // structural zero, so every count feeds the intensity blocks.
            state.latent.z.iter_mut().for_each(|z| *z = false);
        }

        let mut sampler = GibbsSampler {
            data,
            model: plan.model,
            delta: prior.delta,
            log_delta: prior.delta.ln(),
            beta_prior_var: prior.beta_prior_variance.diagonal(p)?,
            gamma_prior_var: prior.gamma_prior_variance.diagonal(p)?,
            d_tau_u: prior.d_tau_u,
            d_tau_xi: prior.d_tau_xi,
            d_sigma_v: prior.d_sigma_v,
            d_sigma_eta: prior.d_sigma_eta,
            d_tau_p: prior.d_tau_p,
            spline_span,
            grid,
            grid_log_weights,
            knots,
            kernels,
            kernel_inverses,
            projector_rows,
            zero_layer_cross,
            covariate_cross,
            period_of,
            period_members,
            xbeta: vec![0.0; n],
            xgamma: vec![0.0; n],
            u_site: vec![0.0; n],
            xi_site: vec![0.0; n],
            state,
            plan,
            rng,
        };
        sampler.refresh_site_caches();
        Ok(sampler)
    }

    pub fn data(&self) -> &SurveyDataset {
        &self.data
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn knots(&self) -> Option<&KnotSet> {
        self.knots.as_ref()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Kernel for the intensity field at its current bandwidth.
    pub fn kernel_u(&self) -> &KnotKernel {
        &self.kernels[self.state.h_u_index]
    }

    /// Kernel for the zero-layer field at its current bandwidth.
    pub fn kernel_xi(&self) -> &KnotKernel {
        &self.kernels[self.state.h_xi_index]
    }

    /// Cached x'beta per observation.
    pub fn xbeta(&self) -> &[f64] {
        &self.xbeta
    }

    /// Cached x'gamma per observation.
    pub fn xgamma(&self) -> &[f64] {
        &self.xgamma
    }

    /// Cached intensity-field value per observation site.
    pub fn u_site(&self) -> &[f64] {
        &self.u_site
    }

    /// Cached zero-layer field value per observation site.
    pub fn xi_site(&self) -> &[f64] {
        &self.xi_site
    }

    /// Current intensity for one observation.
    pub fn lambda(&self, i: usize) -> f64 {
        (self.xbeta[i] + self.u_site[i] + self.state.v[self.period_of[i]]).exp()
    }

    /// Current probit-layer mean for one observation.
    pub fn probit_mean(&self, i: usize) -> f64 {
        self.xgamma[i] + self.xi_site[i] + self.state.eta[self.period_of[i]]
    }

    /// Recomputes every per-observation cache from the current state. Call
    /// after mutating `state` directly; the update methods keep the caches
    /// consistent on their own.
    pub fn refresh_site_caches(&mut self) {
        for (i, obs) in self.data.observations().iter().enumerate() {
            self.xbeta[i] = dot(&obs.covariates, &self.state.beta);
            self.xgamma[i] = dot(&obs.covariates, &self.state.gamma);
        }
        if self.knots.is_some() {
            let du = &self.projector_rows[self.state.h_u_index];
            let dxi = &self.projector_rows[self.state.h_xi_index];
            self.u_site
                .copy_from_slice(project_sites(du, &self.state.mu_u).as_slice());
            self.xi_site
                .copy_from_slice(project_sites(dxi, &self.state.mu_xi).as_slice());
        }
    }

    /// Swaps in a new count vector (same layout). Used by simulation checks
    /// that alternate parameter sweeps with data redraws.
    pub fn replace_counts(&mut self, counts: &[u64]) -> Result<()> {
        self.data.replace_counts(counts)
    }

    fn prior_precision_diag(&self, var: &DVector<f64>, shrink_tau: f64) -> DVector<f64> {
        let mut prec = var.map(|v| 1.0 / v);
        if let Some(span) = &self.spline_span {
            for j in span.clone() {
                prec[j] = shrink_tau;
            }
        }
        prec
    }

    /// Polya-Gamma mixing weights for every observation the intensity side
    /// currently owns. Observations flagged as structural zeros keep their
    /// previous weight untouched; no block reads it while the flag is set.
    pub fn update_omega(&mut self) -> Result<()> {
        for i in 0..self.data.len() {
            if self.state.latent.z[i] {
                continue;
            }
            let y = self.data.observations()[i].count as f64;
            let psi =
                self.xbeta[i] + self.u_site[i] + self.state.v[self.period_of[i]] - self.log_delta;
            self.state.latent.omega[i] = pg::sample_omega(y + self.delta, psi, &mut self.rng)?;
        }
        Ok(())
    }

    /// Gaussian draw of the intensity regression coefficients.
    pub fn update_beta(&mut self) -> Result<()> {
        let p = self.data.covariate_dim();
        let prior_prec = self.prior_precision_diag(&self.beta_prior_var, self.state.tau_p1);
        let mut prec = DMatrix::from_diagonal(&prior_prec);
        let mut lin = DVector::zeros(p);
        for (i, obs) in self.data.observations().iter().enumerate() {
            if self.state.latent.z[i] {
                continue;
            }
            let omega = self.state.latent.omega[i];
            let kappa = 0.5 * (obs.count as f64 - self.delta);
            let offset = self.u_site[i] + self.state.v[self.period_of[i]] - self.log_delta;
            let w = kappa - omega * offset;
            for a in 0..p {
                lin[a] += obs.covariates[a] * w;
                for b in 0..p {
                    prec[(a, b)] += omega * obs.covariates[a] * obs.covariates[b];
                }
            }
        }
        self.state.beta =
            math::sample_gaussian_from_precision(&mut self.rng, &prec, &lin, "beta")?;
        for (i, obs) in self.data.observations().iter().enumerate() {
            self.xbeta[i] = dot(&obs.covariates, &self.state.beta);
        }
        Ok(())
    }

    /// Gaussian draw of the probit regression coefficients. Every
    /// observation contributes, so the curvature comes from the fixed
    /// covariate cross-product.
    pub fn update_gamma(&mut self) -> Result<()> {
        let p = self.data.covariate_dim();
        let prior_prec = self.prior_precision_diag(&self.gamma_prior_var, self.state.tau_p2);
        let mut prec = self.covariate_cross.clone();
        for j in 0..p {
            prec[(j, j)] += prior_prec[j];
        }
        let mut lin = DVector::zeros(p);
        for (i, obs) in self.data.observations().iter().enumerate() {
            let resid =
                self.state.latent.g[i] - self.xi_site[i] - self.state.eta[self.period_of[i]];
            for a in 0..p {
                lin[a] += obs.covariates[a] * resid;
            }
        }
        self.state.gamma =
            math::sample_gaussian_from_precision(&mut self.rng, &prec, &lin, "gamma")?;
        for (i, obs) in self.data.observations().iter().enumerate() {
            self.xgamma[i] = dot(&obs.covariates, &self.state.gamma);
        }
        Ok(())
    }

    /// Sequential scalar draws of the intensity-side temporal effects for
    /// periods 2..T. The first period is the reference level and stays at
    /// zero.
    pub fn update_v(&mut self) {
        let t_periods = self.data.t_periods();
        let inv_s2 = 1.0 / self.state.sigma2_v;
        for t in 1..t_periods {
            let neighbors = if t + 1 < t_periods { 2.0 } else { 1.0 };
            let mut prec = neighbors * inv_s2;
            let mut lin = self.state.v[t - 1] * inv_s2;
            if t + 1 < t_periods {
                lin += self.state.v[t + 1] * inv_s2;
            }
            for &i in &self.period_members[t] {
                if self.state.latent.z[i] {
                    continue;
                }
                let omega = self.state.latent.omega[i];
                let kappa = 0.5 * (self.data.observations()[i].count as f64 - self.delta);
                prec += omega;
                lin += kappa - omega * (self.xbeta[i] + self.u_site[i] - self.log_delta);
            }
            let sd = prec.sqrt().recip();
            let z: f64 = self.rng.sample(rand_distr::StandardNormal);
            self.state.v[t] = lin / prec + sd * z;
        }
    }

    /// Sequential scalar draws of the probit-side temporal effects for
    /// periods 2..T. All observations in a period contribute.
    pub fn update_eta(&mut self) {
        let t_periods = self.data.t_periods();
        let inv_s2 = 1.0 / self.state.sigma2_eta;
        for t in 1..t_periods {
            let neighbors = if t + 1 < t_periods { 2.0 } else { 1.0 };
            let prec = neighbors * inv_s2 + self.period_members[t].len() as f64;
            let mut lin = self.state.eta[t - 1] * inv_s2;
            if t + 1 < t_periods {
                lin += self.state.eta[t + 1] * inv_s2;
            }
            for &i in &self.period_members[t] {
                lin += self.state.latent.g[i] - self.xgamma[i] - self.xi_site[i];
            }
            let sd = prec.sqrt().recip();
            let z: f64 = self.rng.sample(rand_distr::StandardNormal);
            self.state.eta[t] = lin / prec + sd * z;
        }
    }

    /// Gaussian draw of the intensity-field knot coefficients.
    pub fn update_mu_u(&mut self) -> Result<()> {
        let rows = &self.projector_rows[self.state.h_u_index];
        let m = rows.ncols();
        let n = rows.nrows();
        let mut keep = Vec::with_capacity(n);
        let mut roots = Vec::with_capacity(n);
        let mut weights = DVector::zeros(n);
        for i in 0..n {
            if self.state.latent.z[i] {
                continue;
            }
            let omega = self.state.latent.omega[i];
            keep.push(i);
            roots.push(omega.sqrt());
            let kappa = 0.5 * (self.data.observations()[i].count as f64 - self.delta);
            weights[i] =
                kappa - omega * (self.xbeta[i] + self.state.v[self.period_of[i]] - self.log_delta);
        }
        // Only rows the intensity side currently owns contribute curvature,
        // so the weighted design is assembled compact rather than zeroing
        // masked rows of a full copy.
        let mut scaled = DMatrix::zeros(keep.len(), m);
        for j in 0..m {
            let src = rows.column(j);
            let mut dst = scaled.column_mut(j);
            for (k, &i) in keep.iter().enumerate() {
                dst[k] = roots[k] * src[i];
            }
        }
        let mut prec = scaled.tr_mul(&scaled);
        prec += self.state.tau_u * &self.kernel_inverses[self.state.h_u_index];
        let lin = rows.tr_mul(&weights);
        self.state.mu_u =
            math::sample_gaussian_from_precision(&mut self.rng, &prec, &lin, "mu_u")?;
        self.u_site
            .copy_from_slice(project_sites(rows, &self.state.mu_u).as_slice());
        Ok(())
    }

    /// Gaussian draw of the zero-layer knot coefficients. The curvature only
    /// depends on the bandwidth, so it comes from the per-candidate cache.
    pub fn update_mu_xi(&mut self) -> Result<()> {
        let rows = &self.projector_rows[self.state.h_xi_index];
        let n = rows.nrows();
        let mut prec = self.zero_layer_cross[self.state.h_xi_index].clone();
        prec += self.state.tau_xi * &self.kernel_inverses[self.state.h_xi_index];
        let mut resid = DVector::zeros(n);
        for i in 0..n {
            resid[i] = self.state.latent.g[i] - self.xgamma[i] - self.state.eta[self.period_of[i]];
        }
        let lin = rows.tr_mul(&resid);
        self.state.mu_xi =
            math::sample_gaussian_from_precision(&mut self.rng, &prec, &lin, "mu_xi")?;
        self.xi_site
            .copy_from_slice(project_sites(rows, &self.state.mu_xi).as_slice());
        Ok(())
    }

    /// Unnormalized log posterior mass of each candidate bandwidth for the
    /// intensity field, holding the knot coefficients fixed. The field value
    /// at every site moves with the candidate, so the surrogate count mass
    /// is re-evaluated per candidate; terms constant across candidates are
    /// dropped.
    pub fn bandwidth_u_log_masses(&self) -> Vec<f64> {
        let mut masses = Vec::with_capacity(self.grid.len());
        for (l, kernel) in self.kernels.iter().enumerate() {
            let mut lm = self.grid_log_weights[l] - 0.5 * kernel.log_det();
            lm -= 0.5 * self.state.tau_u * kernel.quadratic_form(&self.state.mu_u);
            let u_vals = project_sites(&self.projector_rows[l], &self.state.mu_u);
            for (i, obs) in self.data.observations().iter().enumerate() {
                if self.state.latent.z[i] {
                    continue;
                }
                let y = obs.count as f64;
                let psi =
                    self.xbeta[i] + u_vals[i] + self.state.v[self.period_of[i]] - self.log_delta;
                lm += y * psi - (y + self.delta) * math::log1p_exp(psi);
            }
            masses.push(lm);
        }
        masses
    }

    /// Unnormalized log posterior mass of each candidate bandwidth for the
    /// zero-layer field.
    pub fn bandwidth_xi_log_masses(&self) -> Vec<f64> {
        let mut masses = Vec::with_capacity(self.grid.len());
        for (l, kernel) in self.kernels.iter().enumerate() {
            let mut lm = self.grid_log_weights[l] - 0.5 * kernel.log_det();
            lm -= 0.5 * self.state.tau_xi * kernel.quadratic_form(&self.state.mu_xi);
            let xi_vals = project_sites(&self.projector_rows[l], &self.state.mu_xi);
            for i in 0..self.data.len() {
                let resid = self.state.latent.g[i]
                    - self.xgamma[i]
                    - xi_vals[i]
                    - self.state.eta[self.period_of[i]];
                lm -= 0.5 * resid * resid;
            }
            masses.push(lm);
        }
        masses
    }

    fn draw_bandwidth_index(&mut self, masses: &[f64], block: &str) -> Result<usize> {
        if !masses.iter().any(|m| m.is_finite()) {
            return Err(StzipError::numerical(
                block,
                "no candidate bandwidth has finite posterior mass",
            ));
        }
        Ok(math::sample_categorical_log(&mut self.rng, masses))
    }

    /// Discrete draw of the intensity-field bandwidth.
    pub fn update_bandwidth_u(&mut self) -> Result<()> {
        let masses = self.bandwidth_u_log_masses();
        let idx = self.draw_bandwidth_index(&masses, "bandwidth_u")?;
        self.state.h_u_index = idx;
        let rows = &self.projector_rows[idx];
        self.u_site
            .copy_from_slice(project_sites(rows, &self.state.mu_u).as_slice());
        Ok(())
    }

    /// Discrete draw of the zero-layer bandwidth.
    pub fn update_bandwidth_xi(&mut self) -> Result<()> {
        let masses = self.bandwidth_xi_log_masses();
        let idx = self.draw_bandwidth_index(&masses, "bandwidth_xi")?;
        self.state.h_xi_index = idx;
        let rows = &self.projector_rows[idx];
        self.xi_site
            .copy_from_slice(project_sites(rows, &self.state.mu_xi).as_slice());
        Ok(())
    }

    /// Gamma draw of the intensity-field precision.
    pub fn update_tau_u(&mut self) -> Result<()> {
        let m = self.state.mu_u.len() as f64;
        let quad = self.kernels[self.state.h_u_index].quadratic_form(&self.state.mu_u);
        self.state.tau_u = gamma_draw(
            &mut self.rng,
            self.d_tau_u + 0.5 * m,
            self.d_tau_u + 0.5 * quad,
            "tau_u",
        )?;
        Ok(())
    }

    /// Gamma draw of the zero-layer field precision.
    pub fn update_tau_xi(&mut self) -> Result<()> {
        let m = self.state.mu_xi.len() as f64;
        let quad = self.kernels[self.state.h_xi_index].quadratic_form(&self.state.mu_xi);
        self.state.tau_xi = gamma_draw(
            &mut self.rng,
            self.d_tau_xi + 0.5 * m,
            self.d_tau_xi + 0.5 * quad,
            "tau_xi",
        )?;
        Ok(())
    }

    /// Inverse-gamma draw of the intensity-side walk variance. The first
    /// period is pinned at zero, so the increments are counted from that
    /// anchor.
    pub fn update_sigma2_v(&mut self) -> Result<()> {
        let t = self.data.t_periods() as f64;
        let ss: f64 = self
            .state
            .v
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum();
        let g = gamma_draw(
            &mut self.rng,
            self.d_sigma_v + 0.5 * t,
            self.d_sigma_v + 0.5 * ss,
            "sigma2_v",
        )?;
        self.state.sigma2_v = 1.0 / g;
        Ok(())
    }

    /// Inverse-gamma draw of the probit-side walk variance.
    pub fn update_sigma2_eta(&mut self) -> Result<()> {
        let t = self.data.t_periods() as f64;
        let ss: f64 = self
            .state
            .eta
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum();
        let g = gamma_draw(
            &mut self.rng,
            self.d_sigma_eta + 0.5 * t,
            self.d_sigma_eta + 0.5 * ss,
            "sigma2_eta",
        )?;
        self.state.sigma2_eta = 1.0 / g;
        Ok(())
    }

    /// Gamma draws of the shrinkage precisions for the basis-expansion
    /// columns, one per layer. No-op without a shrinkage span.
    pub fn update_tau_p(&mut self) -> Result<()> {
        let Some(span) = self.spline_span.clone() else {
            return Ok(());
        };
        let k = span.len() as f64;
        let ss_beta: f64 = span.clone().map(|j| self.state.beta[j].powi(2)).sum();
        self.state.tau_p1 = gamma_draw(
            &mut self.rng,
            self.d_tau_p + 0.5 * k,
            self.d_tau_p + 0.5 * ss_beta,
            "tau_p1",
        )?;
        if self.model.has_zero_layer() {
            let ss_gamma: f64 = span.clone().map(|j| self.state.gamma[j].powi(2)).sum();
            self.state.tau_p2 = gamma_draw(
                &mut self.rng,
                self.d_tau_p + 0.5 * k,
                self.d_tau_p + 0.5 * ss_gamma,
                "tau_p2",
            )?;
        }
        Ok(())
    }

    /// All precision and variance scalars the current model carries.
    pub fn update_precisions(&mut self) -> Result<()> {
        if self.model.has_random_effects() {
            self.update_tau_u()?;
            self.update_sigma2_v()?;
            if self.model.has_zero_layer() {
                self.update_tau_xi()?;
                self.update_sigma2_eta()?;
            }
        }
        self.update_tau_p()
    }

    /// Bernoulli draw of the structural-zero flags. Positive counts force
    /// the flag off; for zero counts the two explanations compete through
    /// the probit mass and the exact Poisson zero probability, combined in
    /// log space.
    pub fn update_z(&mut self) {
        for i in 0..self.data.len() {
            if self.data.observations()[i].count > 0 {
                self.state.latent.z[i] = false;
                continue;
            }
            let m = self.probit_mean(i);
            let lambda = self.lambda(i);
            let log_w1 = math::log_normal_cdf(m);
            let log_w0 = math::log_normal_cdf(-m) - lambda;
            let p1 = math::sigmoid(log_w1 - log_w0);
            self.state.latent.z[i] = self.rng.random::<f64>() < p1;
        }
    }

    /// Truncated-normal draw of the probit scores, one side per flag.
    pub fn update_g(&mut self) {
        for i in 0..self.data.len() {
            let m = self.probit_mean(i);
            self.state.latent.g[i] = if self.state.latent.z[i] {
                math::sample_normal_positive(&mut self.rng, m)
            } else {
                math::sample_normal_negative(&mut self.rng, m)
            };
        }
    }

    /// One full sweep over the blocks the current model carries.
    ///
    /// The flags are drawn before the scores: the flag draw integrates the
    /// score out of its conditional, so the score must be redrawn right
    /// after to keep the pair consistent (the score's sign is tied to the
    /// flag).
    pub fn sweep(&mut self) -> Result<()> {
        self.update_omega()?;
        self.update_beta()?;
        if self.model.has_random_effects() {
            self.update_v();
            self.update_mu_u()?;
            self.update_bandwidth_u()?;
            self.update_tau_u()?;
        }
        if self.model.has_zero_layer() {
            self.update_z();
            self.update_g();
            self.update_gamma()?;
            if self.model.has_random_effects() {
                self.update_eta();
                self.update_mu_xi()?;
                self.update_bandwidth_xi()?;
                self.update_tau_xi()?;
            }
        }
        if self.model.has_random_effects() {
            self.update_sigma2_v()?;
            if self.model.has_zero_layer() {
                self.update_sigma2_eta()?;
            }
        }
        self.update_tau_p()
    }

    fn check_invariants(&self, iteration: usize) -> Result<()> {
        for (i, obs) in self.data.observations().iter().enumerate() {
            if self.state.latent.z[i] && obs.count > 0 {
                return Err(StzipError::Numerical {
                    block: "invariant".into(),
                    iteration: Some(iteration),
                    message: format!("structural-zero flag set on a positive count at row {i}"),
                });
            }
        }
        if self.state.v[0] != 0.0 || self.state.eta[0] != 0.0 {
            return Err(StzipError::Numerical {
                block: "invariant".into(),
                iteration: Some(iteration),
                message: "reference-period effect moved off zero".into(),
            });
        }
        if self.state.h_u_index >= self.grid.len() || self.state.h_xi_index >= self.grid.len() {
            return Err(StzipError::Numerical {
                block: "invariant".into(),
                iteration: Some(iteration),
                message: "bandwidth index left the grid".into(),
            });
        }
        Ok(())
    }

    fn column_names(&self) -> Vec<String> {
        let p = self.data.covariate_dim();
        let t_periods = self.data.t_periods();
        let m = self.state.mu_u.len();
        let mut names = Vec::new();
        for j in 0..p {
            names.push(format!("beta_{j}"));
        }
        if self.model.has_zero_layer() {
            for j in 0..p {
                names.push(format!("gamma_{j}"));
            }
        }
        if self.model.has_random_effects() {
            for j in 0..m {
                names.push(format!("mu_u_{j}"));
            }
            for t in 1..=t_periods {
                names.push(format!("v_{t}"));
            }
            names.push("h_u".into());
            names.push("tau_u".into());
            names.push("sigma2_v".into());
            if self.model.has_zero_layer() {
                for j in 0..m {
                    names.push(format!("mu_xi_{j}"));
                }
                for t in 1..=t_periods {
                    names.push(format!("eta_{t}"));
                }
                names.push("h_xi".into());
                names.push("tau_xi".into());
                names.push("sigma2_eta".into());
            }
        }
        if self.spline_span.is_some() {
            names.push("tau_p1".into());
            if self.model.has_zero_layer() {
                names.push("tau_p2".into());
            }
        }
        if self.plan.store_lambda {
            for i in 0..self.data.len() {
                names.push(format!("lambda_{i}"));
            }
        }
        if self.plan.store_g && self.model.has_zero_layer() {
            for i in 0..self.data.len() {
                names.push(format!("g_{i}"));
            }
        }
        names
    }

    fn record_row(&self, row: &mut Vec<f64>) {
        row.clear();
        let s = &self.state;
        row.extend(s.beta.iter());
        if self.model.has_zero_layer() {
            row.extend(s.gamma.iter());
        }
        if self.model.has_random_effects() {
            row.extend(s.mu_u.iter());
            row.extend(s.v.iter());
            row.push(self.grid[s.h_u_index]);
            row.push(s.tau_u);
            row.push(s.sigma2_v);
            if self.model.has_zero_layer() {
                row.extend(s.mu_xi.iter());
                row.extend(s.eta.iter());
                row.push(self.grid[s.h_xi_index]);
                row.push(s.tau_xi);
                row.push(s.sigma2_eta);
            }
        }
        if self.spline_span.is_some() {
            row.push(s.tau_p1);
            if self.model.has_zero_layer() {
                row.push(s.tau_p2);
            }
        }
        if self.plan.store_lambda {
            for i in 0..self.data.len() {
                row.push(self.lambda(i));
            }
        }
        if self.plan.store_g && self.model.has_zero_layer() {
            row.extend(s.latent.g.iter());
        }
    }

    /// Runs the whole plan and returns the stored draws. Any numerical
    /// failure aborts with the iteration index and offending block attached.
    pub fn run(&mut self) -> Result<PosteriorDraws> {
        let mut columns = NamedColumns::new(self.column_names());
        let mut row = Vec::new();
        for iter in 1..=self.plan.iterations {
            self.sweep().map_err(|e| attach_iteration(e, iter))?;
            self.check_invariants(iter)?;
            if iter > self.plan.burn_in && (iter - self.plan.burn_in) % self.plan.thin == 0 {
                self.record_row(&mut row);
                columns.push_row(&row);
            }
        }
        let meta = DrawsMeta {
            model: self.model.as_str().to_string(),
            t_periods: self.data.t_periods(),
            covariate_dim: self.data.covariate_dim(),
            knot_count: self.state.mu_u.len(),
            delta: self.delta,
            bandwidth_grid: if self.model.has_random_effects() {
                self.grid.clone()
            } else {
                Vec::new()
            },
            spline_span: self.spline_span.clone().map(|s| (s.start, s.end)),
            draw_count: columns.rows(),
            seed: self.plan.seed,
        };
        Ok(PosteriorDraws { meta, columns })
    }
}

fn dot(xs: &[f64], v: &DVector<f64>) -> f64 {
    xs.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Projects knot coefficients to all sites at once. Row-by-row dots on a
/// column-major projector gather with stride n per element, so the single
/// matrix-vector product is much cheaper for wide knot sets.
fn project_sites(rows: &DMatrix<f64>, coeffs: &DVector<f64>) -> DVector<f64> {
    rows * coeffs
}

fn attach_iteration(err: StzipError, iteration: usize) -> StzipError {
    match err {
        StzipError::Numerical { block, message, .. } => StzipError::Numerical {
            block,
            iteration: Some(iteration),
            message,
        },
        other => other,
    }
}

fn gamma_draw(rng: &mut ChaCha8Rng, shape: f64, rate: f64, block: &str) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(StzipError::numerical(
            block,
            format!("gamma draw needs positive shape and rate, got {shape} and {rate}"),
        ));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| StzipError::numerical(block, format!("gamma setup failed: {e}")))?;
    let draw = dist.sample(rng);
    if !(draw.is_finite() && draw > 0.0) {
        return Err(StzipError::numerical(
            block,
            format!("gamma draw came out as {draw}"),
        ));
    }
    Ok(draw)
}

/// Fits the full model.
pub fn run_chain(
    data: SurveyDataset,
    prior: &PriorConfig,
    mut plan: SamplerPlan,
    knots: Option<KnotSet>,
    spline_span: Option<Range<usize>>,
) -> Result<PosteriorDraws> {
    plan.model = ModelKind::Stzip;
    GibbsSampler::new(data, prior, plan, knots, spline_span)?.run()
}

/// Fits the reduced model without the zero-inflation layer.
pub fn run_chain_stp(
    data: SurveyDataset,
    prior: &PriorConfig,
    mut plan: SamplerPlan,
    knots: Option<KnotSet>,
    spline_span: Option<Range<usize>>,
) -> Result<PosteriorDraws> {
    plan.model = ModelKind::Stp;
    GibbsSampler::new(data, prior, plan, knots, spline_span)?.run()
}

/// Fits the reduced model without spatial or temporal random effects.
pub fn run_chain_zip(
    data: SurveyDataset,
    prior: &PriorConfig,
    mut plan: SamplerPlan,
    spline_span: Option<Range<usize>>,
) -> Result<PosteriorDraws> {
    plan.model = ModelKind::Zip;
    GibbsSampler::new(data, prior, plan, None, spline_span)?.run()
}
