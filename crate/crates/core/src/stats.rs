//! Exact binomial tails and small descriptive statistics.

use alloc::vec::Vec;

use crate::linalg::log_sum_exp;

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `ln P(X = k)` for `X ~ Binomial(n, p)`, `0 < p < 1`.
pub fn binomial_ln_pmf(n: u64, k: u64, p: f64) -> f64 {
    ln_choose(n, k) + k as f64 * libm::log(p) + (n - k) as f64 * libm::log1p(-p)
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_upper_tail(n: u64, k: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    libm::exp(log_sum_exp((k..=n).map(|j| binomial_ln_pmf(n, j, p)))).min(1.0)
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_lower_tail(n: u64, k: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    libm::exp(log_sum_exp((0..=k).map(|j| binomial_ln_pmf(n, j, p)))).min(1.0)
}

/// Two-sided exact sign-test p-value for `successes` out of `trials` under
/// `p = 1/2`: `min(1, 2 P(X >= max(s, n - s)))`. Returns 1 for no trials.
pub fn sign_test_p_value(trials: u64, successes: u64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let extreme = successes.max(trials - successes);
    (2.0 * binomial_upper_tail(trials, extreme, 0.5)).min(1.0)
}

/// Central acceptance region `[lo, hi]` of `Binomial(n, p)` holding at least
/// `level` of the mass: `lo` is the largest count with `P(X < lo) <= (1-level)/2`
/// and `hi` the smallest with `P(X > hi) <= (1-level)/2`.
pub fn binomial_central_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    let tail = (1.0 - level) / 2.0;
    let mut lo = 0;
    while lo < n && binomial_lower_tail(n, lo, p) <= tail {
        lo += 1;
    }
    let mut hi = n;
    while hi > 0 && binomial_upper_tail(n, hi, p) <= tail {
        hi -= 1;
    }
    (lo, hi)
}

/// Mean and unbiased sample variance; `None` for fewer than two values.
pub fn mean_variance(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var))
}

/// Sample skewness `m3 / m2^(3/2)` with population moments.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| { let d = v - mean; d * d }).sum::<f64>() / n;
    let m3 = values.iter().map(|v| { let d = v - mean; d * d * d }).sum::<f64>() / n;
    m3 / libm::pow(m2, 1.5)
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn central_sign_test_is_one() {
        assert_eq!(sign_test_p_value(100, 50), 1.0);
        assert_eq!(sign_test_p_value(0, 0), 1.0);
    }

    #[test]
    fn extreme_sign_test_matches_exact_sum() {
        // 2 * (C(100,99) + C(100,100)) / 2^100
        let exact = 202.0 / libm::pow(2.0, 100.0);
        assert_relative_eq!(sign_test_p_value(100, 99), exact, max_relative = 1e-10);
        assert_relative_eq!(sign_test_p_value(100, 1), exact, max_relative = 1e-10);
    }

    #[test]
    fn small_binomial_tails_by_hand() {
        // X ~ Bin(5, 1/2): P(X >= 4) = 6/32
        assert_relative_eq!(binomial_upper_tail(5, 4, 0.5), 6.0 / 32.0, max_relative = 1e-12);
        assert_relative_eq!(binomial_lower_tail(5, 1, 0.5), 6.0 / 32.0, max_relative = 1e-12);
        assert_relative_eq!(sign_test_p_value(5, 5), 2.0 / 32.0, max_relative = 1e-12);
    }

    #[test]
    fn central_interval_covers_level() {
        let (lo, hi) = binomial_central_interval(200, 0.05, 0.95);
        assert!(lo < 10 && 10 < hi);
        let below = if lo == 0 { 0.0 } else { binomial_lower_tail(200, lo - 1, 0.05) };
        assert!(below <= 0.025);
        assert!(binomial_upper_tail(200, hi + 1, 0.05) <= 0.025);
        assert!(binomial_lower_tail(200, lo, 0.05) > 0.025);
    }

    #[test]
    fn descriptive_helpers() {
        let (m, v) = mean_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(v, 5.0 / 3.0);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_relative_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, max_relative = 1e-12);
        assert!(skewness(&[1.0, 2.0, 3.0]).abs() < 1e-15);
    }
}
