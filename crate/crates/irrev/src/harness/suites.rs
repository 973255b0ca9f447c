use std::sync::atomic::AtomicBool;

use irrev_core::estimators::{self, Decision, EstimateReport, EstimatorKind};
use irrev_core::matching::{self, TimeKind};
use irrev_core::model::{MarkovModel, SymbolStream};
use irrev_core::{oracle, sampler, stats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ks_statistic, run_trials, trial_rng, Check, HarnessError, HarnessResult, RawRow, SuiteConfig, SuiteReport,
    SummaryRow, TimeSource,
};

/// One estimate together with the exact log-probability ratio of its word.
#[derive(Debug, Clone, Copy)]
struct Draw {
    estimate: EstimateReport,
    exact: f64,
}

fn fresh(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.random())
}

/// `S^W_n` (word from one trajectory, times in an independent one) or
/// `S^H_n` (return pair of one trajectory).
fn draw(
    model: &MarkovModel,
    kind: EstimatorKind,
    n: usize,
    config: &SuiteConfig,
    rng: &mut ChaCha8Rng,
) -> HarnessResult<Draw> {
    let (word, estimate) = match (config.time_source, kind) {
        (TimeSource::Exact, EstimatorKind::W) => {
            let (word, pair) = sampler::sample_waiting_pair(model, n, rng)?;
            (word, EstimateReport::from_log_times(kind, n, pair.ln_minus, pair.ln_plus))
        }
        (TimeSource::Exact, _) => {
            let (word, pair) = sampler::sample_return_pair(model, n, rng)?;
            (word, EstimateReport::from_log_times(kind, n, pair.ln_minus, pair.ln_plus))
        }
        (TimeSource::Scan, EstimatorKind::W) => {
            let word = sampler::draw_word(model, n, rng);
            let target = SymbolStream::new(model, fresh(rng));
            let (plus, minus) = matching::waiting_times_stream(&word, target, config.cap);
            let e = EstimateReport::from_outcomes(kind, n, minus.outcome, plus.outcome);
            (word, e)
        }
        (TimeSource::Scan, _) => {
            let word = sampler::draw_word(model, n, rng);
            let rev: Vec<u8> = word.iter().rev().copied().collect();
            let rest = SymbolStream::continuing(model, &word, fresh(rng));
            let stream = word.iter().copied().chain(rest);
            let r = matching::search_stream(stream, &[&word, &rev], config.cap, TimeKind::Return);
            (word, EstimateReport::from_outcomes(kind, n, r[1].outcome, r[0].outcome))
        }
    };
    Ok(Draw {
        estimate,
        exact: model.entropy_production_exact(&word)?,
    })
}

/// Exact draws with their trial index, the censored count, and whether every
/// trial ran.
type Collected = (Vec<(u64, Draw)>, usize, bool);

/// Draws `config.trials` estimates at word length `n`; returns the exact ones
/// in trial order plus the number dropped for censoring.
fn collect(
    model: &MarkovModel,
    kind: EstimatorKind,
    n: usize,
    config: &SuiteConfig,
    suite_id: &str,
    trials: usize,
    cancel: &AtomicBool,
) -> HarnessResult<Collected> {
    let out = run_trials(trials, cancel, |i| {
        let mut rng = trial_rng(config.base_seed, suite_id, i);
        draw(model, kind, n, config, &mut rng)
    })?;
    let complete = out.iter().all(Option::is_some);
    let mut kept = Vec::with_capacity(out.len());
    let mut censored = 0;
    for (i, d) in out.into_iter().enumerate() {
        match d {
            Some(d) if d.estimate.value().is_some() => kept.push((i as u64, d)),
            Some(_) => censored += 1,
            None => {}
        }
    }
    Ok((kept, censored, complete))
}

fn censoring_check(report: &mut SuiteReport, config: &SuiteConfig, label: &str, censored: usize, total: usize) {
    if config.time_source == TimeSource::Scan {
        let frac = censored as f64 / total.max(1) as f64;
        report.checks.push(Check {
            name: format!("censored_fraction_{label}"),
            value: frac,
            threshold: config.thresholds.max_censored_fraction,
            pass: frac <= config.thresholds.max_censored_fraction,
        });
    }
}

/// Rescaled hitting times `T P([a])` of random words against a fitted
/// exponential, plus the deterministic floor of conditional return times.
pub fn exponential_law_suite(config: &SuiteConfig, model: &MarkovModel, cancel: &AtomicBool) -> HarnessResult<SuiteReport> {
    let th = &config.thresholds;
    let mut report = SuiteReport::new(config, model);
    let t_grid = oracle::linspace(0.05, 0.5, 10);
    let (mut rho_lo, mut rho_hi) = (f64::INFINITY, 0.0f64);
    let mut passing = 0usize;
    let mut violations = 0usize;
    let mut words_total = 0usize;
    for &n in &config.n_values {
        let mut rates = Vec::new();
        for w in 0..config.words {
            let word = sampler::draw_word(model, n, &mut trial_rng(config.base_seed, "exponential_law/word", w as u64));
            let ln_p = model.cylinder_log_prob(&word)?;
            let period = matching::word_period(&word)?;
            let hit_id = format!("exponential_law/hit/{w}");
            let ret_id = format!("exponential_law/return/{w}");
            let times = |id: &str, conditional: bool| {
                run_trials(config.trials, cancel, |i| {
                    let mut rng = trial_rng(config.base_seed, id, i);
                    conditional_time(model, &word, conditional, config, &mut rng)
                })
            };
            let hits = times(&hit_id, false)?;
            let returns = times(&ret_id, true)?;
            report.complete &= hits.iter().chain(&returns).all(Option::is_some);
            let hits: Vec<f64> = hits.into_iter().flatten().flatten().collect();
            let returns: Vec<f64> = returns.into_iter().flatten().flatten().collect();
            let censored = config.trials - hits.len();
            let scaled: Vec<f64> = hits.iter().map(|t| t * ln_p.exp()).collect();
            let floor = period.k as f64;
            let below = returns.iter().filter(|&&t| t < floor).count();
            violations += below;
            let (mean, _) = stats::mean_variance(&scaled).unwrap_or((f64::NAN, f64::NAN));
            let rho = 1.0 / mean;
            let ks = ks_statistic(&scaled, |x| 1.0 - (-rho * x).exp());
            let ok = ks < th.ks_exponential && censored == 0;
            passing += ok as usize;
            words_total += 1;
            rates.push(rho);
            for &t in &t_grid {
                let f = scaled.iter().filter(|&&x| x <= t).count() as f64 / scaled.len() as f64;
                let r = -(1.0 - f).ln() / t;
                rho_lo = rho_lo.min(r);
                rho_hi = rho_hi.max(r);
            }
            let mut row = SummaryRow::new(model.alphabet().render(&word), n, &scaled)
                .with("rho_hat", rho)
                .with("ln_cylinder_prob", ln_p)
                .with("period", floor)
                .with("return_floor_violations", below as f64)
                .with("censored", censored as f64);
            row.ks = Some(ks);
            row.pass = Some(ok);
            report.rows.push(row);
            report.raw.extend(scaled.iter().enumerate().map(|(i, &value)| RawRow {
                label: format!("word{w}"),
                n,
                trial: i as u64,
                value,
            }));
        }
        report.rows.push(SummaryRow::new("rho_hat", n, &rates));
    }
    report.rows.push(
        SummaryRow::new("band", config.n_values[0], &[])
            .with("rho_1", rho_lo)
            .with("rho_2", rho_hi),
    );
    let needed = th.min_words_passing.min(words_total);
    report.checks.push(Check::at_least("words_ks_passing", passing as f64, needed as f64));
    report.checks.push(Check {
        name: "return_floor_violations".into(),
        value: violations as f64,
        threshold: 0.0,
        pass: violations == 0,
    });
    report.checks.push(Check {
        name: "small_t_band".into(),
        value: rho_hi - rho_lo,
        threshold: 0.0,
        pass: rho_lo > 0.0 && rho_hi >= rho_lo && rho_hi.is_finite(),
    });
    Ok(report)
}

/// Hitting time of `word` in a fresh stationary trajectory, or its return
/// time in a trajectory that starts with it. `None` when censored.
fn conditional_time(
    model: &MarkovModel,
    word: &[u8],
    conditional: bool,
    config: &SuiteConfig,
    rng: &mut ChaCha8Rng,
) -> HarnessResult<Option<f64>> {
    if config.time_source == TimeSource::Exact {
        let mut s = sampler::PairSampler::new(model, word)?;
        let pair = if conditional {
            s.sample_return(rng)?
        } else {
            s.sample_waiting(rng)?
        };
        return Ok(Some(pair.ln_plus.exp().round()));
    }
    let rec = if conditional {
        let rest = SymbolStream::continuing(model, word, fresh(rng));
        let stream = word.iter().copied().chain(rest);
        matching::search_stream(stream, &[word], config.cap, TimeKind::Return)[0]
    } else {
        matching::search_stream(SymbolStream::new(model, fresh(rng)), &[word], config.cap, TimeKind::Hit)[0]
    };
    Ok(rec.outcome.value().map(|t| t as f64))
}

/// Per-symbol waiting-time estimates against the exact mean entropy
/// production, and the log-n sandwich `|S^W_n - S_n| / log n`.
pub fn consistency_suite(config: &SuiteConfig, model: &MarkovModel, cancel: &AtomicBool) -> HarnessResult<SuiteReport> {
    let th = &config.thresholds;
    let mut report = SuiteReport::new(config, model);
    let mep = oracle::mep_exact(model);
    report.oracle.insert("mep".into(), mep);
    let mut quantiles = Vec::new();
    for &n in &config.n_values {
        let (draws, censored, complete) =
            collect(model, EstimatorKind::W, n, config, "consistency", config.trials, cancel)?;
        report.complete &= complete;
        let per_symbol: Vec<f64> = draws.iter().map(|(_, d)| d.estimate.per_symbol).collect();
        let log_n = (n as f64).ln();
        let sandwich: Vec<f64> = draws
            .iter()
            .map(|(_, d)| (d.estimate.raw - d.exact).abs() / log_n)
            .collect();
        let q = stats::quantile(&sandwich, th.sandwich_quantile);
        quantiles.push(q);
        let row = SummaryRow::new("W", n, &per_symbol);
        let se = (row.variance / row.count as f64).sqrt();
        let z = (row.mean - mep).abs() / se;
        report.checks.push(Check::below(&format!("mean_within_se_n{n}"), z, th.se_multiplier));
        censoring_check(&mut report, config, &format!("n{n}"), censored, config.trials);
        report.rows.push(row.with("se", se).with("sandwich_quantile", q).with("z", z));
        report.raw.extend(draws.iter().map(|&(trial, d)| RawRow {
            label: "W".into(),
            n,
            trial,
            value: d.estimate.raw,
        }));
    }
    let worst_step = quantiles.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check {
        name: "sandwich_non_increasing".into(),
        value: worst_step,
        threshold: 0.0,
        pass: quantiles.windows(2).all(|w| w[1] <= w[0]),
    });
    report.oracle.insert(
        "sandwich_constant".into(),
        quantiles.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(report)
}

/// Standardized `S^W_n` and `S^H_n` against the normal law with the exact
/// mean and variance.
pub fn clt_suite(config: &SuiteConfig, model: &MarkovModel, cancel: &AtomicBool) -> HarnessResult<SuiteReport> {
    let th = &config.thresholds;
    let mep = oracle::mep_exact(model);
    let sigma2 = oracle::sigma2_exact(model)?;
    if sigma2 < 1e-10 {
        return Err(HarnessError::Config(format!(
            "asymptotic variance {sigma2:e} is degenerate; the normal limit does not apply"
        )));
    }
    let mut report = SuiteReport::new(config, model);
    report.oracle.insert("mep".into(), mep);
    report.oracle.insert("sigma2".into(), sigma2);
    for kind in [EstimatorKind::W, EstimatorKind::H] {
        let label = kind.as_str();
        for &n in &config.n_values {
            let id = format!("clt/{label}");
            let (draws, censored, complete) = collect(model, kind, n, config, &id, config.trials, cancel)?;
            report.complete &= complete;
            let raw: Vec<f64> = draws.iter().map(|(_, d)| d.estimate.raw).collect();
            let scale = (n as f64 * sigma2).sqrt();
            let z: Vec<f64> = raw.iter().map(|s| (s - n as f64 * mep) / scale).collect();
            let ks = ks_statistic(&z, stats::normal_cdf);
            let mut row = SummaryRow::new(label, n, &raw);
            let var_rel = (row.variance / n as f64 / sigma2 - 1.0).abs();
            row.ks = Some(ks);
            row.pass = Some(ks < th.ks_normal && var_rel < th.variance_rel);
            report.checks.push(Check::below(&format!("ks_{label}_n{n}"), ks, th.ks_normal));
            report.checks.push(Check::below(&format!("variance_{label}_n{n}"), var_rel, th.variance_rel));
            censoring_check(&mut report, config, &format!("{label}_n{n}"), censored, config.trials);
            report.rows.push(row.with("variance_ratio", 1.0 + var_rel).with("skewness", stats::skewness(&z)));
            report.raw.extend(draws.iter().map(|&(trial, d)| RawRow {
                label: label.into(),
                n,
                trial,
                value: d.estimate.raw,
            }));
        }
    }
    Ok(report)
}

/// `(1/n) log mean exp(p S^W_n)` via log-sum-exp.
fn empirical_scgf(values: &[f64], p: f64, n: usize) -> f64 {
    let hi = values.iter().map(|s| p * s).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|s| (p * s - hi).exp()).sum();
    (hi + sum.ln() - (values.len() as f64).ln()) / n as f64
}

/// Empirical SCGF of `S^W_n` on a grid of tilts and one tail frequency.
pub fn ldp_suite(config: &SuiteConfig, model: &MarkovModel, cancel: &AtomicBool) -> HarnessResult<SuiteReport> {
    let th = &config.thresholds;
    let mut report = SuiteReport::new(config, model);
    let mep = oracle::mep_exact(model);
    let (c_minus, c_plus) = oracle::scgf_endpoints(model)?;
    report.oracle.insert("mep".into(), mep);
    report.oracle.insert("c_minus".into(), c_minus);
    report.oracle.insert("c_plus".into(), c_plus);
    for &n in &config.n_values {
        let (draws, censored, complete) = collect(model, EstimatorKind::W, n, config, "ldp", config.trials, cancel)?;
        report.complete &= complete;
        let values: Vec<f64> = draws.iter().map(|(_, d)| d.estimate.raw).collect();
        let frac = censored as f64 / config.trials as f64;
        report.checks.push(Check::below(&format!("censored_fraction_n{n}"), frac, th.max_censored_fraction));
        for &p in &config.p_grid {
            let w_hat = empirical_scgf(&values, p, n);
            let e = oracle::waiting_scgf(model, p)?;
            report.oracle.insert(format!("scgf(p={p})"), e);
            let err = (w_hat - e).abs();
            let mut row = SummaryRow::new(format!("p={p}"), n, &[w_hat]).with("scgf", e).with("abs_error", err);
            row.pass = Some(err < th.ldp_abs);
            report.rows.push(row);
            report.checks.push(Check::below(&format!("scgf_p{p}_n{n}"), err, th.ldp_abs));
        }
        if mep > 0.0 && c_plus > mep {
            let q = mep + 0.5 * (c_plus - mep);
            let rate = oracle::rate_function(model, q)?.value;
            let hits = values.iter().filter(|&&s| s / n as f64 >= q).count();
            let empirical = (hits as f64 / values.len() as f64).ln() / n as f64;
            let err = (empirical + rate).abs();
            report.rows.push(
                SummaryRow::new(format!("tail q>={q}"), n, &[empirical])
                    .with("neg_rate", -rate)
                    .with("count", hits as f64),
            );
            report.checks.push(Check::below(&format!("tail_n{n}"), err, th.tail_abs));
        }
        if config.reversed_trials > 0 {
            let reversed = model.reversed()?;
            let (rdraws, _, complete) =
                collect(&reversed, EstimatorKind::W, n, config, "ldp/reversed", config.reversed_trials, cancel)?;
            report.complete &= complete;
            let rvalues: Vec<f64> = rdraws.iter().map(|(_, d)| d.estimate.raw).collect();
            let fwd = empirical_scgf(&values, -0.5, n);
            let rev = empirical_scgf(&rvalues, -0.5, n);
            report.rows.push(SummaryRow::new("reversed p=-0.5", n, &[rev]).with("forward", fwd));
            report.checks.push(Check::below(&format!("reversed_symmetry_n{n}"), (fwd - rev).abs(), 2.0 * th.ldp_abs));
        }
        report.raw.extend(draws.iter().map(|&(trial, d)| RawRow {
            label: "W".into(),
            n,
            trial,
            value: d.estimate.raw,
        }));
    }
    Ok(report)
}

/// Rejection rate of the sign test over independent replications: inside the
/// binomial interval around `alpha` for a reversible model, at least
/// `min_power` otherwise.
pub fn sign_calibration_suite(
    config: &SuiteConfig,
    model: &MarkovModel,
    cancel: &AtomicBool,
) -> HarnessResult<SuiteReport> {
    let th = &config.thresholds;
    let mut report = SuiteReport::new(config, model);
    let mep = oracle::mep_exact(model);
    let reversible = mep <= 1e-12;
    report.oracle.insert("mep".into(), mep);
    let pairs = config.trials;
    let reps = config.replications;
    for &n in &config.n_values {
        let id = format!("sign_calibration/{n}");
        let out = run_trials(reps * pairs, cancel, |i| {
            let mut rng = trial_rng(config.base_seed, &id, i);
            Ok(draw(model, EstimatorKind::W, n, config, &mut rng)?.estimate)
        })?;
        let mut rejections = 0u64;
        let mut indeterminate = 0u64;
        let mut done = 0u64;
        let mut statistics = Vec::with_capacity(reps);
        for (r, chunk) in out.chunks(pairs).enumerate() {
            let Some(estimates) = chunk.iter().copied().collect::<Option<Vec<_>>>() else {
                report.complete = false;
                continue;
            };
            done += 1;
            match estimators::sign_test(&estimates, n, config.cap, th.alpha) {
                Ok(t) => {
                    rejections += (t.decision == Decision::RejectReversibility) as u64;
                    statistics.push(t.statistic);
                    report.raw.push(RawRow {
                        label: "p_value".into(),
                        n,
                        trial: r as u64,
                        value: t.p_value.unwrap_or(f64::NAN),
                    });
                }
                Err(irrev_core::Error::Indeterminate(_)) => indeterminate += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let rate = rejections as f64 / done.max(1) as f64;
        let mut row = SummaryRow::new("sign_statistic", n, &statistics)
            .with("rejections", rejections as f64)
            .with("replications", done as f64)
            .with("indeterminate", indeterminate as f64)
            .with("rejection_rate", rate);
        if reversible {
            let (lo, hi) = stats::binomial_central_interval(done, th.alpha, th.interval_level);
            row = row.with("interval_lo", lo as f64).with("interval_hi", hi as f64);
            report.checks.push(Check {
                name: format!("level_n{n}"),
                value: rejections as f64,
                threshold: hi as f64,
                pass: (lo..=hi).contains(&rejections),
            });
        } else {
            report.checks.push(Check::at_least(&format!("power_n{n}"), rate, th.min_power));
        }
        row.pass = report.checks.last().map(|c| c.pass);
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_suite, ModelSpec, SuiteKind};

    #[test]
    fn empirical_scgf_at_zero_vanishes() {
        assert_eq!(empirical_scgf(&[3.0, -1.0, 7.5], 0.0, 10), 0.0);
    }

    #[test]
    fn period_one_word_never_returns_early() {
        let model = MarkovModel::iid_uniform(2).unwrap();
        let mut config = SuiteConfig::new(SuiteKind::ExponentialLaw);
        config.cap = 1_000_000;
        let word = [0u8; 6];
        for source in [TimeSource::Scan, TimeSource::Exact] {
            config.time_source = source;
            for i in 0..200 {
                let mut rng = trial_rng(1, "floor", i);
                let t = conditional_time(&model, &word, true, &config, &mut rng).unwrap().unwrap();
                assert!(t >= 1.0);
            }
        }
        let word = [0u8, 1, 0, 1, 0, 1];
        config.time_source = TimeSource::Scan;
        for i in 0..200 {
            let mut rng = trial_rng(2, "floor", i);
            let t = conditional_time(&model, &word, true, &config, &mut rng).unwrap().unwrap();
            assert!(t >= 2.0);
        }
    }

    #[test]
    fn clt_refuses_reversible_model() {
        let mut config = SuiteConfig::new(SuiteKind::Clt);
        config.model = ModelSpec::Symmetric;
        config.trials = 100;
        let err = run_suite(&config, &AtomicBool::new(false)).unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn reversible_consistency_estimates_shrink() {
        let mut config = SuiteConfig::new(SuiteKind::Consistency);
        config.model = ModelSpec::Symmetric;
        config.n_values = vec![40];
        config.trials = 200;
        let r = run_suite(&config, &AtomicBool::new(false)).unwrap();
        assert!(r.rows[0].mean.abs() < 0.05, "{:?}", r.rows[0]);
    }

    #[test]
    fn scan_and_exact_sources_agree_in_mean() {
        let mut config = SuiteConfig::new(SuiteKind::Consistency);
        config.n_values = vec![6];
        config.trials = 2000;
        let cancel = AtomicBool::new(false);
        let exact = run_suite(&config, &cancel).unwrap();
        config.time_source = TimeSource::Scan;
        let scan = run_suite(&config, &cancel).unwrap();
        let (a, b) = (&exact.rows[0], &scan.rows[0]);
        let se = ((a.variance + b.variance) / 2000.0).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * se, "{a:?} {b:?}");
    }
}
