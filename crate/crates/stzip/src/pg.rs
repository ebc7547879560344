//! Negative-binomial surrogate for the Poisson likelihood and the
//! Polya-gamma latent machinery built on it.
//!
//! Writing the Poisson kernel as a negative-binomial mass with a large shape
//! delta makes every intensity-side update conditionally Gaussian once the
//! Polya-gamma variable omega is introduced. At the shapes used here
//! (b = y + delta with delta >= 10^3) the PG(b, c) law is indistinguishable
//! from a normal with matched moments, so omega is drawn from that normal
//! instead of an exact PG sampler.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, StzipError};
use crate::math::log1p_exp;

/// Matched-moment normal approximation to PG(b, c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgApprox {
    pub b: f64,
    pub c: f64,
    pub mean: f64,
    pub var: f64,
}

impl PgApprox {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        let (mean, var) = pg_moments(b, c)?;
        Ok(PgApprox { b, c, mean, var })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_from_moments(self.mean, self.var, rng)
    }
}

/// Log mass of the negative-binomial surrogate
/// Gamma(y+delta)/(Gamma(delta) y!) * (lambda/delta)^y / (lambda/delta + 1)^(y+delta),
/// which converges to the Poisson(lambda) log-pmf as delta grows.
pub fn nb_surrogate_logpmf(y: u64, lambda: f64, delta: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(StzipError::Config(format!(
            "surrogate mass needs a positive finite intensity, got {lambda}"
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(StzipError::Config(format!(
            "surrogate mass needs a positive finite shape, got {delta}"
        )));
    }
    let yf = y as f64;
    let psi = lambda.ln() - delta.ln();
    Ok(ln_gamma(yf + delta) - ln_gamma(delta) - ln_gamma(yf + 1.0) + yf * psi
        - (yf + delta) * log1p_exp(psi))
}

/// Mean and variance of PG(b, c):
/// mean = (b/2c) tanh(c/2), var = (b/4c^3) sech^2(c/2) (sinh c - c),
/// with series limits b/4 and b/24 taken below |c| = 1e-4 where the closed
/// forms cancel.
pub fn pg_moments(b: f64, c: f64) -> Result<(f64, f64)> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(StzipError::Config(format!(
            "Polya-gamma shape must be positive and finite, got {b}"
        )));
    }
    let ca = c.abs();
    if ca < 1e-4 {
        let c2 = ca * ca;
        let c4 = c2 * c2;
        let mean = 0.25 * b * (1.0 - c2 / 12.0 + c4 / 120.0);
        let var = b * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c4 / 13440.0);
        Ok((mean, var))
    } else {
        let mean = (b / (2.0 * ca)) * (0.5 * ca).tanh();
        let var = b / (4.0 * ca * ca * ca) * stable_q(ca);
        Ok((mean, var))
    }
}

/// sech^2(c/2) * (sinh c - c) for c > 0, arranged so no branch subtracts
/// nearly equal numbers or overflows:
/// small c expands sinh c - c as its leading series, large c folds the
/// growing sinh into the decaying sech^2 analytically.
fn stable_q(c: f64) -> f64 {
    let em = (-c).exp();
    let denom = (1.0 + em) * (1.0 + em);
    if c < 0.2 {
        let c2 = c * c;
        let sinh_minus_c =
            (c * c2 / 6.0) * (1.0 + c2 / 20.0 + c2 * c2 / 840.0 + c2 * c2 * c2 / 60480.0);
        sinh_minus_c * 4.0 * em / denom
    } else if c < 30.0 {
        (c.sinh() - c) * 4.0 * em / denom
    } else {
        (2.0 - 4.0 * c * em - 2.0 * em * em) / denom
    }
}

fn sample_from_moments<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    let normal = Normal::new(mean, var.sqrt()).expect("pg moments give a valid normal");
    for _ in 0..10 {
        let draw = normal.sample(rng);
        if draw > 0.0 {
            return draw;
        }
    }
    mean / 1e6
}

/// Draw omega ~ PG(b, c) through the matched normal. Below b = 10^3 the
/// approximation degrades; that is reported once per process, not treated as
/// an error.
pub fn sample_omega<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> Result<f64> {
    static REGIME_WARNING: std::sync::Once = std::sync::Once::new();
    if b < 1e3 {
        REGIME_WARNING.call_once(|| {
            eprintln!(
                "warning: Polya-gamma shape {b} is below the normal-approximation regime (>= 1e3); \
                 draws will be biased"
            );
        });
    }
    let (mean, var) = pg_moments(b, c)?;
    Ok(sample_from_moments(mean, var, rng))
}

/// The centered count and tilt entering the Gaussian updates:
/// kappa = (y - delta)/2 and psi = lin_pred - log delta.
pub fn kappa_psi(y: u64, delta: f64, lin_pred_intensity: f64) -> (f64, f64) {
    ((y as f64 - delta) / 2.0, lin_pred_intensity - delta.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::poisson_log_pmf;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogate_reference_values() {
        // y = 0 collapses to -delta*log1p(lambda/delta)
        let v = nb_surrogate_logpmf(0, 1.0, 1e4).unwrap();
        assert_relative_eq!(v, -0.999950003333083, max_relative = 1e-12);
        assert!((v - (-1.0)).abs() < 1e-4);

        // huge delta reproduces the Poisson log-pmf
        let v = nb_surrogate_logpmf(2, 3.0, 1e6).unwrap();
        assert!((v - poisson_log_pmf(2, 3.0)).abs() < 1e-4);

        // vanishing intensity puts all mass on zero
        let v = nb_surrogate_logpmf(0, 1e-300, 1e4).unwrap();
        assert!(v.abs() < 1e-10);

        assert!(nb_surrogate_logpmf(1, 0.0, 1e4).is_err());
        assert!(nb_surrogate_logpmf(1, -2.0, 1e4).is_err());
        assert!(nb_surrogate_logpmf(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn surrogate_normalizes() {
        for (lambda, delta) in [(0.1, 1e4), (20.0, 1e4), (5.0, 1e3)] {
            let total: f64 = (0..=2000)
                .map(|y| nb_surrogate_logpmf(y, lambda, delta).unwrap().exp())
                .sum();
            assert!(
                (total - 1.0).abs() < 1e-8,
                "normalization off for lambda={lambda}, delta={delta}: {total}"
            );
        }
    }

    #[test]
    fn surrogate_accurate_near_the_mode() {
        // within |y - lambda| of about 14, delta = 1e4 keeps the relative
        // pmf error under 1e-2 (it grows like ((y-lambda)^2 - y)/(2 delta))
        let mut max_rel: f64 = 0.0;
        for lambda in [0.5, 1.0, 5.0] {
            for y in 0..=10u64 {
                let exact = poisson_log_pmf(y, lambda).exp();
                let approx = nb_surrogate_logpmf(y, lambda, 1e4).unwrap().exp();
                max_rel = max_rel.max((approx - exact).abs() / exact);
            }
        }
        assert!(max_rel < 1e-2, "relative error {max_rel}");
    }

    #[test]
    fn surrogate_error_shrinks_with_delta() {
        let worst = |delta: f64| -> f64 {
            let mut m: f64 = 0.0;
            for lambda in [0.1, 1.0, 5.0, 20.0] {
                for y in 0..=50u64 {
                    let exact = poisson_log_pmf(y, lambda).exp();
                    let approx = nb_surrogate_logpmf(y, lambda, delta).unwrap().exp();
                    m = m.max((approx - exact).abs() / exact);
                }
            }
            m
        };
        let (e3, e4, e5) = (worst(1e3), worst(1e4), worst(1e5));
        assert!(e3 > e4 && e4 > e5, "errors not monotone: {e3} {e4} {e5}");
    }

    #[test]
    fn pg_moments_limits_and_reference() {
        let (m, v) = pg_moments(24.0, 0.0).unwrap();
        assert_eq!(m, 6.0);
        assert_eq!(v, 1.0);

        let (m, v) = pg_moments(2.0, 2.0).unwrap();
        assert_relative_eq!(m, 0.38079707797788244, max_relative = 1e-13);
        assert_relative_eq!(v, 0.042702476792717352, max_relative = 1e-13);

        assert!(pg_moments(0.0, 1.0).is_err());
        assert!(pg_moments(-3.0, 1.0).is_err());
    }

    #[test]
    fn pg_moments_even_in_c() {
        assert_eq!(pg_moments(3.5, 1.7).unwrap(), pg_moments(3.5, -1.7).unwrap());
        assert_eq!(pg_moments(10.0, 0.3).unwrap(), pg_moments(10.0, -0.3).unwrap());
    }

    #[test]
    fn pg_moments_branches_agree_at_switch() {
        let below = pg_moments(1e4, 0.9999999e-4).unwrap();
        let above = pg_moments(1e4, 1.0000001e-4).unwrap();
        assert_relative_eq!(below.0, above.0, max_relative = 1e-10);
        assert_relative_eq!(below.1, above.1, max_relative = 1e-10);
    }

    #[test]
    fn pg_moments_large_tilt() {
        let (m, v) = pg_moments(1e4, 40.0).unwrap();
        assert_relative_eq!(m, 125.0, max_relative = 1e-10); // (b/2c) tanh -> b/(2c)
        // q -> 2, so var -> b/(2 c^3)
        assert_relative_eq!(v, 1e4 / (2.0 * 40.0f64.powi(3)), max_relative = 1e-6);
        assert!(v > 0.0);
    }

    #[test]
    fn omega_mean_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let w = sample_omega(1e4, 0.0, &mut rng).unwrap();
            assert!(w > 0.0);
            sum += w;
        }
        let sd = (1e4f64 / 24.0).sqrt();
        assert!((sum / n as f64 - 2500.0).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn omega_variance_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (mean, var) = pg_moments(1e4, 1.0).unwrap();
        let n = 100_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let w = sample_omega(1e4, 1.0, &mut rng).unwrap();
            s += w - mean;
            s2 += (w - mean) * (w - mean);
        }
        let emp_var = s2 / n as f64 - (s / n as f64) * (s / n as f64);
        assert!((emp_var - var).abs() / var < 0.05, "empirical {emp_var} vs {var}");
    }

    #[test]
    fn pg_approx_stores_moments() {
        let a = PgApprox::new(1e4, 0.5).unwrap();
        let (m, v) = pg_moments(1e4, 0.5).unwrap();
        assert_eq!((a.mean, a.var), (m, v));
        assert!(a.mean > 0.0 && a.var > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        assert!(a.sample(&mut rng) > 0.0);
    }

    #[test]
    fn kappa_psi_values() {
        assert_eq!(kappa_psi(0, 1e4, 0.7).0, -5000.0);
        let (_, psi) = kappa_psi(3, 1e4, (1e4f64).ln());
        assert_eq!(psi, 0.0);
        assert_eq!(kappa_psi(10_000, 1e4, 0.0).0, 0.0);
    }
}
