//! Shared numerical primitives: normal CDF helpers, truncated-normal and
//! multivariate-normal sampling, discrete draws, quantiles, and chain
//! diagnostics.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::ContinuousCDF;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, StzipError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

/// log Phi(x), finite for arbitrarily deep left tails.
///
/// Down to x = -10 the erfc path keeps full relative accuracy. Below that
/// erfc(|x|/sqrt(2)) still has plenty of range but the leading digits carry
/// all the information, so the classical tail expansion
/// Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - ...) is used instead.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x >= -10.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
            + 105.0 / (x2 * x2 * x2 * x2)
            - 945.0 / (x2 * x2 * x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(p)
}

/// log(1 + e^x) without overflow on either side.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 33.0 {
        // e^-x below f64 epsilon relative to x
        x
    } else if x > -37.0 {
        x.exp().ln_1p()
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// log P(Y = y) for Y ~ Poisson(lambda).
pub fn poisson_log_pmf(y: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * lambda.ln() - lambda - ln_gamma(y as f64 + 1.0)
}

/// One draw from the categorical distribution given unnormalized log weights.
pub fn sample_categorical_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Draw from N(mean, 1) restricted to (0, inf).
///
/// For a standardized bound up to 5 the inverse-CDF map through the upper
/// tail survival keeps full precision; deeper bounds switch to the shifted
/// exponential rejection sampler (Robert 1995), whose acceptance rate
/// approaches 1 as the bound grows.
pub fn sample_normal_positive<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let a = -mean; // standardized lower bound for Z = X - mean
    loop {
        let z = if a <= 5.0 {
            let tail = normal_cdf(-a);
            let u: f64 = rng.random();
            let s = tail * (1.0 - u); // in (0, tail]
            -normal_quantile(s)
        } else {
            let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
            loop {
                let u1 = 1.0 - rng.random::<f64>(); // (0, 1]
                let x = a - u1.ln() / alpha;
                let accept = (-0.5 * (x - alpha) * (x - alpha)).exp();
                if rng.random::<f64>() <= accept {
                    break x;
                }
            }
        };
        let x = mean + z;
        if x > 0.0 && x.is_finite() {
            return x;
        }
    }
}

/// Draw from N(mean, 1) restricted to (-inf, 0).
pub fn sample_normal_negative<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    -sample_normal_positive(rng, -mean)
}

/// Draw theta ~ N(Q^-1 l, Q^-1) given the precision matrix Q and linear
/// term l of a Gaussian full conditional.
pub fn sample_gaussian_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    block: &str,
) -> Result<DVector<f64>> {
    let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
        StzipError::numerical(block, "conditional precision matrix is not positive definite")
    })?;
    let mean = chol.solve(linear);
    let n = linear.len();
    let z = DVector::from_fn(n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    let noise = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| StzipError::numerical(block, "singular Cholesky factor"))?;
    Ok(mean + noise)
}

/// Scramble one 64-bit value; used to derive independent stream seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of a run keyed by `base`.
pub fn derive_stream_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

/// Linear-interpolation quantile (R type 7) of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value
/// (with the small-sample correction of Stephens).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "ks_two_sample needs non-empty samples");
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xa.len(), xb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        let fa = i as f64 / na as f64;
        let fb = j as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    let en = ((na as f64 * nb as f64) / (na + nb) as f64).sqrt();
    let p = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    (d, p)
}

/// Effective sample size by Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let c0 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if c0 <= 0.0 {
        return nf;
    }
    let autocov = |lag: usize| -> f64 {
        x[..n - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(u, v)| (u - mean) * (v - mean))
            .sum::<f64>()
            / nf
    };
    let max_lag = (n - 2).min(2000);
    let mut tau = -1.0;
    let mut m = 0usize;
    loop {
        let lag0 = 2 * m;
        let lag1 = 2 * m + 1;
        if lag1 > max_lag {
            break;
        }
        let gamma = (autocov(lag0) + autocov(lag1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    (nf / tau.max(1.0)).clamp(1.0, nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_cdf(1.96), 0.97500210485177957, max_relative = 1e-10);
        assert_relative_eq!(normal_cdf(-1.96), 0.024997895148220434, max_relative = 1e-10);
    }

    #[test]
    fn log_normal_cdf_reference_values() {
        assert_relative_eq!(log_normal_cdf(1.5), -0.06914345561223398, max_relative = 1e-9);
        assert_relative_eq!(log_normal_cdf(-8.0), -35.013437159914550, max_relative = 1e-10);
        assert_relative_eq!(log_normal_cdf(-20.0), -203.91715537109726, max_relative = 1e-10);
        assert_relative_eq!(log_normal_cdf(-50.0), -1254.8313611394199, max_relative = 1e-10);
    }

    #[test]
    fn log_normal_cdf_branches_agree_at_switch() {
        let erfc_side = (0.5 * erfc(10.0 / SQRT_2)).ln();
        assert_relative_eq!(log_normal_cdf(-10.0 - 1e-12), erfc_side, max_relative = 1e-8);
    }

    #[test]
    fn log1p_exp_stable() {
        assert_relative_eq!(log1p_exp(0.0), std::f64::consts::LN_2, max_relative = 1e-15);
        assert!((log1p_exp(40.0) - 40.0).abs() < 1e-15);
        assert_relative_eq!(log1p_exp(-40.0), (-40.0f64).exp(), max_relative = 1e-12);
        // identity log(1+e^x) - log(1+e^-x) = x
        assert_relative_eq!(log1p_exp(3.0) - log1p_exp(-3.0), 3.0, max_relative = 1e-13);
    }

    #[test]
    fn poisson_log_pmf_reference() {
        assert_relative_eq!(poisson_log_pmf(2, 3.0), -1.4959226032237259, max_relative = 1e-13);
        assert_relative_eq!(poisson_log_pmf(0, 2.5), -2.5, max_relative = 1e-15);
        assert_eq!(poisson_log_pmf(3, 0.0), f64::NEG_INFINITY);
        assert_eq!(poisson_log_pmf(0, 0.0), 0.0);
    }

    #[test]
    fn log_sum_exp_values() {
        let w = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        assert!(log_sum_exp(&w).abs() < 1e-12);
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1001.0]),
            -1000.0 + (1.0 + (-1.0f64).exp()).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn categorical_frequencies_match_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logw = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_categorical_log(&mut rng, &logw)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn splitmix64_reference_vector() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(derive_stream_seed(42, 0), derive_stream_seed(42, 1));
    }

    #[test]
    fn truncated_normal_half_normal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_normal_positive(&mut rng, 0.0)).sum::<f64>() / n as f64;
        // E[X] = sqrt(2/pi), sd about 0.60, so 0.005 is > 3 standard errors
        assert!((mean - 0.7978845608028654).abs() < 0.005);
    }

    #[test]
    fn truncated_normal_moderate_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_normal_positive(&mut rng, 1.0);
            assert!(x > 0.0);
            sum += x;
        }
        // E[X | X>0] for X ~ N(1,1)
        assert!((sum / n as f64 - 1.2875999709391784).abs() < 0.008);
    }

    #[test]
    fn truncated_normal_deep_tail_mean() {
        // mean -8 forces the rejection branch; the conditional law is
        // concentrated just above zero with mean phi(8)/Phi(-8) - 8
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_normal_positive(&mut rng, -8.0);
            assert!(x > 0.0);
            sum += x;
        }
        assert!((sum / n as f64 - 0.12136811223611268).abs() < 0.002);
    }

    #[test]
    fn truncated_normal_negative_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_normal_negative(&mut rng, 8.0);
            assert!(x < 0.0);
            sum += x;
        }
        assert!((sum / n as f64 + 0.12136811223611268).abs() < 0.002);
    }

    #[test]
    fn gaussian_from_precision_matches_moments() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = DVector::from_row_slice(&[1.0, 2.0]);
        // mean = Q^-1 l = (0, 2); covariance = Q^-1
        let cov = q.clone().try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let mut s = DVector::zeros(2);
        let mut ss = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_gaussian_from_precision(&mut rng, &q, &l, "test").unwrap();
            s += &x;
            ss += &x * x.transpose();
        }
        let m = s / n as f64;
        let c = ss / n as f64 - &m * m.transpose();
        assert!((m[0] - 0.0).abs() < 0.015);
        assert!((m[1] - 2.0).abs() < 0.02);
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[(i, j)] - cov[(i, j)]).abs() < 0.04, "cov mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn gaussian_from_precision_rejects_indefinite() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let l = DVector::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_gaussian_from_precision(&mut rng, &q, &l, "test").is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let xs: Vec<f64> = (1..=5).map(|v| v as f64).collect();
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
        let ys: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        assert_relative_eq!(quantile_sorted(&ys, 0.025), 25.975, max_relative = 1e-12);
    }

    #[test]
    fn kolmogorov_sf_reference_values() {
        assert_relative_eq!(kolmogorov_sf(1.358), 0.05002679733, max_relative = 1e-9);
        assert_relative_eq!(kolmogorov_sf(0.5), 0.9639452437, max_relative = 1e-9);
        assert_relative_eq!(kolmogorov_sf(2.0), 0.0006709252558, max_relative = 1e-9);
    }

    #[test]
    fn ks_separates_same_and_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, p_same) = ks_two_sample(&a, &b);
        assert!(p_same > 0.01, "same-law p-value {p_same}");
        let shifted: Vec<f64> = b.iter().map(|v| v + 0.2).collect();
        let (_, p_diff) = ks_two_sample(&a, &shifted);
        assert!(p_diff < 1e-4, "shifted p-value {p_diff}");
    }

    #[test]
    fn ess_detects_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 20_000;
        let iid: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess_iid = effective_sample_size(&iid);
        assert!(ess_iid > 0.5 * n as f64, "iid ess {ess_iid}");
        let mut ar = Vec::with_capacity(n);
        let mut prev = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = 0.95 * prev + e;
            ar.push(prev);
        }
        let ess_ar = effective_sample_size(&ar);
        assert!(ess_ar < 0.15 * n as f64, "ar ess {ess_ar}");
        assert!(ess_ar > 50.0);
    }
}
