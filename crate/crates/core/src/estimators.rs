//! Entropy-production estimators from hitting, waiting and matching times,
//! and the irreversibility tests built on them.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matching::{self, Outcome, TimeRecord};
use crate::stats;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_CAP: u64 = 100_000_000;
/// Fewest pairs accepted by the sign test.
pub const MIN_SIGN_PAIRS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum EstimatorKind {
    /// `log(T^- / T^+)`
    H,
    /// `log(W^- / W^+)`
    W,
    /// `log(L^+ / L^-)`, experimental.
    Dual,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::H => "H",
            EstimatorKind::W => "W",
            EstimatorKind::Dual => "dual",
        }
    }
}

/// How `raw` relates to the uncensored estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Bound {
    Exact,
    /// The numerator was censored: the estimate is at least `raw`.
    Lower,
    /// The denominator was censored: the estimate is at most `raw`.
    Upper,
    /// Both searches were censored; `raw` is NaN.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub n: usize,
    /// Log-ratio in nats.
    pub raw: f64,
    pub per_symbol: f64,
    pub bound: Bound,
    pub censored: bool,
    pub caps_used: u64,
}

impl EstimateReport {
    /// `log(numerator / denominator)` from two search outcomes.
    pub fn from_outcomes(
        estimator: EstimatorKind,
        n: usize,
        numerator: Outcome,
        denominator: Outcome,
    ) -> Self {
        let ln = |o: Outcome| libm::log(o.bound() as f64);
        let (raw, bound) = match (numerator, denominator) {
            (Outcome::Found(_), Outcome::Found(_)) => (ln(numerator) - ln(denominator), Bound::Exact),
            (Outcome::Censored(_), Outcome::Found(_)) => (ln(numerator) - ln(denominator), Bound::Lower),
            (Outcome::Found(_), Outcome::Censored(_)) => (ln(numerator) - ln(denominator), Bound::Upper),
            (Outcome::Censored(_), Outcome::Censored(_)) => (f64::NAN, Bound::Indeterminate),
        };
        let caps_used = match (numerator, denominator) {
            (Outcome::Censored(c), _) | (_, Outcome::Censored(c)) => c,
            _ => 0,
        };
        EstimateReport {
            estimator,
            n,
            raw,
            per_symbol: raw / n as f64,
            bound,
            censored: bound != Bound::Exact,
            caps_used,
        }
    }

    /// Exact estimate from the natural logs of two uncensored times.
    pub fn from_log_times(estimator: EstimatorKind, n: usize, ln_numerator: f64, ln_denominator: f64) -> Self {
        let raw = ln_numerator - ln_denominator;
        EstimateReport {
            estimator,
            n,
            raw,
            per_symbol: raw / n as f64,
            bound: Bound::Exact,
            censored: false,
            caps_used: 0,
        }
    }

    /// The value when it is exact.
    pub fn value(&self) -> Option<f64> {
        (self.bound == Bound::Exact).then_some(self.raw)
    }

    /// Sign of the true estimate when the report decides it: `Some(0)` only
    /// for an exact zero.
    pub fn sign(&self) -> Option<i8> {
        match self.bound {
            Bound::Exact if self.raw > 0.0 => Some(1),
            Bound::Exact if self.raw < 0.0 => Some(-1),
            Bound::Exact => Some(0),
            Bound::Lower if self.raw > 0.0 => Some(1),
            Bound::Upper if self.raw < 0.0 => Some(-1),
            _ => None,
        }
    }
}

/// `S^H_n = log(T^-_n / T^+_n)`, both times from one pass over `trajectory`.
pub fn estimate_h(trajectory: &[u8], n: usize, cap: u64) -> Result<EstimateReport> {
    let (plus, minus) = matching::return_pair(trajectory, n, cap)?;
    Ok(from_pair(EstimatorKind::H, &plus, &minus))
}

/// `S^W_n = log(W^-_n / W^+_n)` for the first `n` symbols of `word_source`
/// searched in `target`.
pub fn estimate_w(word_source: &[u8], target: &[u8], n: usize, cap: u64) -> Result<EstimateReport> {
    let (plus, minus) = matching::waiting_times(word_source, target, n, cap)?;
    Ok(from_pair(EstimatorKind::W, &plus, &minus))
}

/// Estimate from a `(plus, minus)` pair of time records.
pub fn from_pair(estimator: EstimatorKind, plus: &TimeRecord, minus: &TimeRecord) -> EstimateReport {
    EstimateReport::from_outcomes(estimator, plus.word_len, minus.outcome, plus.outcome)
}

/// `log(L^+_n / L^-_n)` from matching lengths. No limit theorem is attached.
pub fn estimate_dual(trajectory: &[u8], n: usize) -> Result<EstimateReport> {
    let l = matching::matching_lengths(trajectory, n)?;
    let raw = libm::log(l.plus as f64) - libm::log(l.minus as f64);
    Ok(EstimateReport {
        estimator: EstimatorKind::Dual,
        n,
        raw,
        per_symbol: raw / n as f64,
        bound: Bound::Exact,
        censored: l.saturated,
        caps_used: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TestMethod {
    Sign,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Decision {
    RejectReversibility,
    NoEvidence,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TestReport {
    pub method: TestMethod,
    /// `M+` for the sign test, `|S^H_n|` (or its bound) for the threshold test.
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub n: usize,
    /// Pairs that entered the sign test after dropping ties and undecided signs.
    pub m: usize,
    pub cap: u64,
    pub alpha: Option<f64>,
    pub c_thr: Option<f64>,
    pub dropped: usize,
}

/// Exact sign test on a batch of `S^W_n` reports from independent pairs.
///
/// Exact zeros and reports whose sign is left open by censoring are dropped;
/// the rest feed a two-sided binomial test of `P(S^W_n > 0) = 1/2`.
pub fn sign_test(estimates: &[EstimateReport], n: usize, cap: u64, alpha: f64) -> Result<TestReport> {
    if estimates.len() < MIN_SIGN_PAIRS {
        return Err(Error::Validation(format!(
            "sign test needs at least {MIN_SIGN_PAIRS} pairs, got {}",
            estimates.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if estimates.iter().all(|e| e.bound == Bound::Indeterminate) {
        return Err(Error::Indeterminate("every pair was censored on both sides".into()));
    }
    let signs: Vec<i8> = estimates.iter().filter_map(EstimateReport::sign).filter(|&s| s != 0).collect();
    let plus = signs.iter().filter(|&&s| s > 0).count();
    let p_value = stats::sign_test_p_value(signs.len() as u64, plus as u64);
    Ok(TestReport {
        method: TestMethod::Sign,
        statistic: plus as f64,
        p_value: Some(p_value),
        decision: if p_value < alpha {
            Decision::RejectReversibility
        } else {
            Decision::NoEvidence
        },
        n,
        m: signs.len(),
        cap,
        alpha: Some(alpha),
        c_thr: None,
        dropped: estimates.len() - signs.len(),
    })
}

/// Sign test over `(word_source, target)` trajectory pairs.
pub fn test_reversibility_sign(pairs: &[(&[u8], &[u8])], n: usize, cap: u64, alpha: f64) -> Result<TestReport> {
    let estimates = pairs
        .iter()
        .map(|(source, target)| estimate_w(source, target, n, cap))
        .collect::<Result<Vec<_>>>()?;
    sign_test(&estimates, n, cap, alpha)
}

/// Rejects when `|S^H_n| > c_thr log n`. A censored estimate decides only
/// when its bound already exceeds the threshold in the open direction.
pub fn threshold_decision(estimate: &EstimateReport, c_thr: f64, cap: u64) -> TestReport {
    let n = estimate.n;
    let threshold = c_thr * libm::log(n as f64);
    let decision = match estimate.bound {
        Bound::Exact if estimate.raw.abs() > threshold => Decision::RejectReversibility,
        Bound::Exact => Decision::NoEvidence,
        Bound::Lower if estimate.raw > threshold => Decision::RejectReversibility,
        Bound::Upper if estimate.raw < -threshold => Decision::RejectReversibility,
        _ => Decision::Indeterminate,
    };
    TestReport {
        method: TestMethod::Threshold,
        statistic: estimate.raw.abs(),
        p_value: None,
        decision,
        n,
        m: 1,
        cap,
        alpha: None,
        c_thr: Some(c_thr),
        dropped: 0,
    }
}

pub fn test_reversibility_threshold(trajectory: &[u8], n: usize, cap: u64, c_thr: f64) -> Result<TestReport> {
    if n < 2 {
        return Err(Error::Validation("threshold test needs n >= 2".into()));
    }
    Ok(threshold_decision(&estimate_h(trajectory, n, cap)?, c_thr, cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn abc(len: usize) -> alloc::vec::Vec<u8> {
        (0..len).map(|i| (i % 3) as u8).collect()
    }

    fn exact(raw: f64) -> EstimateReport {
        EstimateReport::from_log_times(EstimatorKind::W, 10, raw, 0.0)
    }

    #[test]
    fn palindromic_prefix_gives_zero() {
        let t = [0u8, 1, 0, 2, 0, 1, 0, 1, 2];
        let e = estimate_h(&t, 3, 100).unwrap();
        assert_eq!(e.raw, 0.0);
        assert_eq!(e.bound, Bound::Exact);
        assert_eq!(estimate_w(&t, &[2, 2, 1, 0, 1, 0, 2], 3, 100).unwrap().raw, 0.0);
    }

    #[test]
    fn one_sided_censoring_is_lower_bound() {
        let e = estimate_h(&abc(200), 3, 100).unwrap();
        assert_eq!(e.bound, Bound::Lower);
        assert!(e.censored);
        assert_abs_diff_eq!(e.raw, libm::log(100.0 / 3.0), epsilon = 1e-15);
        assert_eq!(e.sign(), Some(1));
        let w = estimate_w(&abc(10), &abc(200), 3, 100).unwrap();
        assert_eq!(w.bound, Bound::Lower);
    }

    #[test]
    fn swapped_roles_negate_exactly() {
        let a = EstimateReport::from_outcomes(EstimatorKind::H, 5, Outcome::Found(37), Outcome::Found(5));
        let b = EstimateReport::from_outcomes(EstimatorKind::H, 5, Outcome::Found(5), Outcome::Found(37));
        assert_eq!(a.raw, -b.raw);
        let both = EstimateReport::from_outcomes(EstimatorKind::H, 5, Outcome::Censored(9), Outcome::Censored(9));
        assert_eq!(both.bound, Bound::Indeterminate);
        assert_eq!(both.sign(), None);
    }

    #[test]
    fn dual_examples() {
        assert_eq!(estimate_dual(&[0, 0, 0, 0], 4).unwrap().raw, 0.0);
        assert_eq!(estimate_dual(&[0, 1, 2, 3], 4).unwrap().raw, 0.0);
    }

    #[test]
    fn sign_test_examples() {
        let zeros = alloc::vec![exact(0.0); 30];
        let r = sign_test(&zeros, 10, 100, 0.05).unwrap();
        assert_eq!(r.p_value, Some(1.0));
        assert_eq!(r.decision, Decision::NoEvidence);
        assert_eq!(r.dropped, 30);

        let mut half: alloc::vec::Vec<_> = (0..50).map(|_| exact(1.0)).collect();
        half.extend((0..50).map(|_| exact(-1.0)));
        assert_eq!(sign_test(&half, 10, 100, 0.05).unwrap().p_value, Some(1.0));

        let mut lopsided: alloc::vec::Vec<_> = (0..99).map(|_| exact(0.5)).collect();
        lopsided.push(exact(-0.5));
        let r = sign_test(&lopsided, 10, 100, 0.05).unwrap();
        assert_eq!(r.decision, Decision::RejectReversibility);
        assert!((r.p_value.unwrap() - 202.0 / libm::pow(2.0, 100.0)).abs() < 1e-38);
    }

    #[test]
    fn sign_test_guards() {
        assert!(matches!(sign_test(&[exact(1.0); 5], 10, 100, 0.05), Err(Error::Validation(_))));
        let none = EstimateReport::from_outcomes(EstimatorKind::W, 4, Outcome::Censored(9), Outcome::Censored(9));
        assert!(matches!(sign_test(&[none; 25], 4, 9, 0.05), Err(Error::Indeterminate(_))));
    }

    #[test]
    fn threshold_examples() {
        let zero = EstimateReport::from_log_times(EstimatorKind::H, 1000, 0.0, 0.0);
        assert_eq!(threshold_decision(&zero, 10.0, 100).decision, Decision::NoEvidence);
        let big = EstimateReport::from_log_times(EstimatorKind::H, 1000, 200.0, 0.0);
        assert_eq!(threshold_decision(&big, 10.0, 100).decision, Decision::RejectReversibility);
        let lower = EstimateReport::from_outcomes(EstimatorKind::H, 1000, Outcome::Censored(10), Outcome::Found(5));
        assert_eq!(threshold_decision(&lower, 10.0, 10).decision, Decision::Indeterminate);
    }
}
