//! Squared-exponential spatial kernel, knot selection, and the low-rank
//! projector that carries knot-level effects to observation sites.
//!
//! A Gaussian process over the study region is approximated through its
//! values at M knots: with H the knot correlation matrix and v(s) the
//! correlation vector between site s and the knots, the site-level effect is
//! d(s)' mu where d(s) = H^-1 v(s) and mu are the knot effects. All of the
//! per-bandwidth quantities the sampler needs (factorized H, log det H,
//! projector rows) live in [`KnotKernel`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, StzipError};

/// Correlation between two sites under bandwidth `h`:
/// exp(-||s1 - s2||^2 / h^2).
pub fn correlation(h: f64, s1: [f64; 2], s2: [f64; 2]) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(StzipError::Config(format!(
            "kernel bandwidth must be positive and finite, got {h}"
        )));
    }
    Ok(correlation_unchecked(h, s1, s2))
}

#[inline]
fn correlation_unchecked(h: f64, s1: [f64; 2], s2: [f64; 2]) -> f64 {
    let dx = s1[0] - s2[0];
    let dy = s1[1] - s2[1];
    (-(dx * dx + dy * dy) / (h * h)).exp()
}

/// A fixed set of knot locations.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    points: Vec<[f64; 2]>,
}

impl KnotSet {
    pub fn from_points(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(StzipError::Config("knot set must not be empty".into()));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(StzipError::Config("knot coordinates must be finite".into()));
        }
        Ok(KnotSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Median of all pairwise knot distances. Used to anchor the bandwidth
    /// grid to the scale of the knot layout.
    pub fn median_spacing(&self) -> f64 {
        let m = self.points.len();
        if m < 2 {
            return 0.0;
        }
        let mut dists = Vec::with_capacity(m * (m - 1) / 2);
        for k in 0..m {
            for l in (k + 1)..m {
                let dx = self.points[k][0] - self.points[l][0];
                let dy = self.points[k][1] - self.points[l][1];
                dists.push((dx * dx + dy * dy).sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = dists.len();
        if n % 2 == 1 {
            dists[n / 2]
        } else {
            0.5 * (dists[n / 2 - 1] + dists[n / 2])
        }
    }
}

/// `len` log-spaced bandwidth candidates spanning 0.1 to 2 times the median
/// knot spacing.
pub fn bandwidth_grid(median_spacing: f64, len: usize) -> Result<Vec<f64>> {
    if !(median_spacing > 0.0) || !median_spacing.is_finite() {
        return Err(StzipError::Config(format!(
            "median knot spacing must be positive to build a bandwidth grid, got {median_spacing}"
        )));
    }
    if len < 2 {
        return Err(StzipError::Config("bandwidth grid needs at least 2 points".into()));
    }
    let lo = 0.1 * median_spacing;
    let hi = 2.0 * median_spacing;
    let ratio = hi / lo;
    Ok((0..len)
        .map(|i| lo * ratio.powf(i as f64 / (len - 1) as f64))
        .collect())
}

/// Pick `m` knots as k-means centroids of the observation sites
/// (k-means++ seeding, Lloyd iterations capped at 100, convergence when no
/// centroid moves more than 1e-8). Deterministic for a given seed.
pub fn select_knots(sites: &[[f64; 2]], m: usize, seed: u64) -> Result<KnotSet> {
    if m == 0 {
        return Err(StzipError::Config("knot count must be positive".into()));
    }
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for s in sites {
        if !s[0].is_finite() || !s[1].is_finite() {
            return Err(StzipError::input("site coordinates must be finite"));
        }
        if !distinct.contains(s) {
            distinct.push(*s);
        }
    }
    if distinct.len() < m {
        return Err(StzipError::input(format!(
            "requested {m} knots but only {} distinct sites are available",
            distinct.len()
        )));
    }
    if distinct.len() == m {
        return KnotSet::from_points(distinct);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sites.len();
    let d2 = |a: [f64; 2], b: [f64; 2]| -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        dx * dx + dy * dy
    };

    // k-means++ seeding
    let mut centroids: Vec<[f64; 2]> = Vec::with_capacity(m);
    centroids.push(sites[rng.random_range(0..n)]);
    let mut min_d2: Vec<f64> = sites.iter().map(|s| d2(*s, centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = min_d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, w) in min_d2.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        let c = sites[chosen];
        centroids.push(c);
        for (i, s) in sites.iter().enumerate() {
            let d = d2(*s, c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }

    // Lloyd iterations
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        for (i, s) in sites.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let d = d2(*s, *c);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assignment[i] = best;
        }
        let mut sums = vec![[0.0f64; 2]; m];
        let mut counts = vec![0usize; m];
        for (i, s) in sites.iter().enumerate() {
            let k = assignment[i];
            sums[k][0] += s[0];
            sums[k][1] += s[1];
            counts[k] += 1;
        }
        let mut max_move: f64 = 0.0;
        for k in 0..m {
            if counts[k] == 0 {
                continue;
            }
            let new = [sums[k][0] / counts[k] as f64, sums[k][1] / counts[k] as f64];
            let moved = d2(new, centroids[k]).sqrt();
            if moved > max_move {
                max_move = moved;
            }
            centroids[k] = new;
        }
        if max_move < 1e-8 {
            break;
        }
    }

    KnotSet::from_points(centroids)
}

/// Knot correlation matrix for one bandwidth, factorized once, together with
/// everything the sampler repeatedly needs from it.
///
/// If the plain matrix is not numerically positive definite the diagonal is
/// inflated through the jitter ladder 1e-8, 1e-6, 1e-4 before giving up.
#[derive(Debug, Clone)]
pub struct KnotKernel {
    knots: KnotSet,
    h: f64,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
}

impl KnotKernel {
    pub fn new(knots: &KnotSet, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(StzipError::Config(format!(
                "kernel bandwidth must be positive and finite, got {h}"
            )));
        }
        let m = knots.len();
        let base = DMatrix::from_fn(m, m, |k, l| {
            correlation_unchecked(h, knots.points()[k], knots.points()[l])
        });
        for jitter in [0.0, 1e-8, 1e-6, 1e-4] {
            let mut mat = base.clone();
            for k in 0..m {
                mat[(k, k)] += jitter;
            }
            if let Some(chol) = Cholesky::new(mat.clone()) {
                let log_det: f64 = chol.ln_determinant();
                return Ok(KnotKernel { knots: knots.clone(), h, matrix: mat, chol, log_det, jitter });
            }
        }
        Err(StzipError::numerical(
            "knot_covariance",
            format!("correlation matrix for bandwidth {h} is not positive definite even with jitter 1e-4"),
        ))
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn knots(&self) -> &KnotSet {
        &self.knots
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// H^-1 x.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }

    /// Dense H^-1.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// mu' H^-1 mu.
    pub fn quadratic_form(&self, mu: &DVector<f64>) -> f64 {
        mu.dot(&self.chol.solve(mu))
    }

    /// Draw mu ~ N(0, tau^-1 H): L z / sqrt(tau) with H = L L'.
    pub fn sample_knot_effects<R: Rng + ?Sized>(&self, rng: &mut R, tau: f64) -> DVector<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let m = self.knots.len();
        let z = DVector::from_fn(m, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        self.chol.l() * z / tau.sqrt()
    }

    /// Rows d(s_i)' = (H^-1 v(s_i))' for every site, stacked as an N x M
    /// matrix, so site-level effects are `rows * mu`.
    pub fn projector_rows(&self, sites: &[[f64; 2]]) -> DMatrix<f64> {
        let m = self.knots.len();
        let n = sites.len();
        // columns are v(s_i); one solve handles all sites
        let v = DMatrix::from_fn(m, n, |k, i| {
            correlation_unchecked(self.h, self.knots.points()[k], sites[i])
        });
        self.chol.solve(&v).transpose()
    }
}
