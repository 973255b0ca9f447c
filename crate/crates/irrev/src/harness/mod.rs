//! Monte Carlo validation suites. Every suite is a pure function of its
//! [`SuiteConfig`]: trial `i` of suite `s` draws from a ChaCha8 generator
//! seeded by [`trial_seed`], and trials are merged by index.

mod suites;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use irrev_core::estimators::DEFAULT_ALPHA;
use irrev_core::model::MarkovModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{self, cell, optional_cell, IoError, Tabular};

pub use suites::{clt_suite, consistency_suite, exponential_law_suite, ldp_suite, sign_calibration_suite};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid suite configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] irrev_core::Error),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SuiteKind {
    ExponentialLaw,
    Consistency,
    Clt,
    Ldp,
    SignCalibration,
}

impl SuiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteKind::ExponentialLaw => "exponential_law",
            SuiteKind::Consistency => "consistency",
            SuiteKind::Clt => "clt",
            SuiteKind::Ldp => "ldp",
            SuiteKind::SignCalibration => "sign_calibration",
        }
    }

    fn distributional(self) -> bool {
        !matches!(self, SuiteKind::SignCalibration)
    }
}

/// Where a suite's model comes from. Built-ins are written `cyclic`,
/// `cyclic:0.6:0.2`, `iid:3` and `symmetric`; anything else is a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelSpec {
    Cyclic { forward: f64, backward: f64 },
    IidUniform { m: usize },
    /// Order-1 chain on three symbols with a symmetric transition matrix.
    Symmetric,
    File(PathBuf),
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?} in model {text:?}"));
        match parts.as_slice() {
            ["cyclic"] => Ok(ModelSpec::Cyclic {
                forward: 0.5,
                backward: 0.25,
            }),
            ["cyclic", f, b] => Ok(ModelSpec::Cyclic {
                forward: num(f)?,
                backward: num(b)?,
            }),
            ["iid", m] => m
                .parse()
                .map(|m| ModelSpec::IidUniform { m })
                .map_err(|_| format!("bad alphabet size in model {text:?}")),
            ["symmetric"] => Ok(ModelSpec::Symmetric),
            _ => Ok(ModelSpec::File(PathBuf::from(text))),
        }
    }

    pub fn load(&self) -> HarnessResult<MarkovModel> {
        Ok(match self {
            ModelSpec::Cyclic { forward, backward } => MarkovModel::cyclic(*forward, *backward)?,
            ModelSpec::IidUniform { m } => MarkovModel::iid_uniform(*m)?,
            ModelSpec::Symmetric => MarkovModel::from_matrix(&[
                &[0.5, 0.3, 0.2],
                &[0.3, 0.3, 0.4],
                &[0.2, 0.4, 0.4],
            ])?,
            ModelSpec::File(path) => io::load_model(path)?,
        })
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelSpec::Cyclic { forward, backward } => write!(f, "cyclic:{forward}:{backward}"),
            ModelSpec::IidUniform { m } => write!(f, "iid:{m}"),
            ModelSpec::Symmetric => f.write_str("symmetric"),
            ModelSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        ModelSpec::parse(&s)
    }
}

/// Pass/fail thresholds. They are acceptance choices, not model facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ks_exponential: f64,
    pub min_words_passing: usize,
    pub se_multiplier: f64,
    pub sandwich_quantile: f64,
    pub ks_normal: f64,
    pub variance_rel: f64,
    pub ldp_abs: f64,
    pub tail_abs: f64,
    pub max_censored_fraction: f64,
    pub alpha: f64,
    pub interval_level: f64,
    pub min_power: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_exponential: 0.04,
            min_words_passing: 9,
            se_multiplier: 3.0,
            sandwich_quantile: 0.99,
            ks_normal: 0.06,
            variance_rel: 0.15,
            ldp_abs: 0.01,
            tail_abs: 0.05,
            max_censored_fraction: 0.01,
            alpha: DEFAULT_ALPHA,
            interval_level: 0.95,
            min_power: 0.95,
        }
    }
}

/// How waiting and return times are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TimeSource {
    /// Exact draws from the hitting-time law, no scanning and no cap.
    #[default]
    Exact,
    /// Literal search over simulated trajectories, censored at `cap`.
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub suite: SuiteKind,
    pub model: ModelSpec,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub cap: u64,
    pub time_source: TimeSource,
    pub output: Option<PathBuf>,
    pub raw_output: Option<PathBuf>,
    pub thresholds: Thresholds,
    /// Tilts for the LDP suite.
    pub p_grid: Vec<f64>,
    /// Random words per length in the exponential-law suite.
    pub words: usize,
    /// Independent sign tests in the calibration suite; `trials` is the
    /// number of pairs per test.
    pub replications: usize,
    /// LDP suite: also run the reversed model at `p = -0.5`, with this many trials.
    pub reversed_trials: usize,
}

impl SuiteConfig {
    /// Defaults for one suite on the reference cyclic chain.
    pub fn new(suite: SuiteKind) -> Self {
        let (n_values, trials) = match suite {
            SuiteKind::ExponentialLaw => (vec![8], 2000),
            SuiteKind::Consistency => (vec![50, 100, 200, 400], 500),
            SuiteKind::Clt => (vec![500], 1000),
            SuiteKind::Ldp => (vec![200], 50_000),
            SuiteKind::SignCalibration => (vec![1000], 20),
        };
        SuiteConfig {
            suite,
            model: ModelSpec::Cyclic {
                forward: 0.5,
                backward: 0.25,
            },
            n_values,
            trials,
            base_seed: 0,
            cap: 100_000_000,
            time_source: match suite {
                SuiteKind::ExponentialLaw => TimeSource::Scan,
                _ => TimeSource::Exact,
            },
            output: None,
            raw_output: None,
            thresholds: Thresholds::default(),
            p_grid: vec![-0.5, -0.25, 0.25, 0.5],
            words: 10,
            replications: 200,
            reversed_trials: 0,
        }
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_values.is_empty() {
            return bad("no word lengths given".into());
        }
        if self.n_values.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("word lengths {:?} are not nondecreasing", self.n_values));
        }
        if self.n_values[0] == 0 {
            return bad("word length must be at least 1".into());
        }
        if self.suite.distributional() && self.trials < 100 {
            return bad(format!("{} needs at least 100 trials, got {}", self.suite.as_str(), self.trials));
        }
        if self.suite == SuiteKind::SignCalibration && (self.trials < 20 || self.replications == 0) {
            return bad("sign calibration needs at least 20 pairs and one replication".into());
        }
        if self.suite == SuiteKind::Ldp && self.p_grid.iter().any(|p| !(p.abs() <= 0.6)) {
            return bad("LDP tilts must lie in [-0.6, 0.6]".into());
        }
        if self.suite == SuiteKind::ExponentialLaw && self.words == 0 {
            return bad("no words requested".into());
        }
        if self.cap == 0 {
            return bad("cap must be positive".into());
        }
        Ok(())
    }
}

/// `SHA-256(base_seed || suite id || trial)` truncated to 64 bits; word
/// lengths are deliberately excluded so trial `i` shares its stream across `n`.
pub fn trial_seed(base_seed: u64, suite_id: &str, trial: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((suite_id.len() as u64).to_le_bytes());
    h.update(suite_id.as_bytes());
    h.update(trial.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn trial_rng(base_seed: u64, suite_id: &str, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(base_seed, suite_id, trial))
}

/// Sup distance between the empirical CDF of `sample` and `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Runs `trial` for indices `0..count` on the worker pool and returns the
/// results in index order. Trials not started before `cancel` is raised are
/// returned as `None`.
pub(crate) fn run_trials<T, F>(count: usize, cancel: &AtomicBool, trial: F) -> HarnessResult<Vec<Option<T>>>
where
    T: Send,
    F: Fn(u64) -> HarnessResult<T> + Sync,
{
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            if cancel.load(Ordering::Relaxed) {
                Ok(None)
            } else {
                trial(i).map(Some)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub ks: Option<f64>,
    pub pass: Option<bool>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl SummaryRow {
    pub(crate) fn new(label: impl Into<String>, n: usize, values: &[f64]) -> Self {
        let (mean, variance) = match values {
            [v] => (*v, f64::NAN),
            _ => irrev_core::stats::mean_variance(values).unwrap_or((f64::NAN, f64::NAN)),
        };
        SummaryRow {
            label: label.into(),
            n,
            count: values.len(),
            mean,
            variance,
            ks: None,
            pass: None,
            extra: BTreeMap::new(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_owned(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub(crate) fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
        }
    }

    pub(crate) fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

/// One value per (n, trial), kept for the optional raw CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRow {
    pub label: String,
    pub n: usize,
    pub trial: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub model_id: String,
    pub config: SuiteConfig,
    pub oracle: BTreeMap<String, f64>,
    pub rows: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    pub pass: bool,
    /// False when the run was cancelled before every trial finished.
    pub complete: bool,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub raw: Vec<RawRow>,
}

impl SuiteReport {
    pub(crate) fn new(config: &SuiteConfig, model: &MarkovModel) -> Self {
        SuiteReport {
            suite: config.suite.as_str().into(),
            model_id: model.model_id(),
            config: config.clone(),
            oracle: BTreeMap::new(),
            rows: Vec::new(),
            checks: Vec::new(),
            pass: false,
            complete: true,
            wall_clock_secs: 0.0,
            raw: Vec::new(),
        }
    }

    pub(crate) fn finish(mut self) -> Self {
        self.pass = self.complete && !self.checks.is_empty() && self.checks.iter().all(|c| c.pass);
        self
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Canonical JSON of everything except the wall clock, for comparing runs.
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.wall_clock_secs = 0.0;
        let mut s = io::to_json(&copy).unwrap_or_default();
        for r in &self.raw {
            s.push_str(&format!("\n{},{},{},{}", r.label, r.n, r.trial, r.value.to_bits()));
        }
        s
    }

    pub fn raw_csv(&self) -> HarnessResult<String> {
        let header: Vec<String> = ["suite", "label", "n", "trial", "value"].map(String::from).into();
        let rows: Vec<Vec<String>> = self
            .raw
            .iter()
            .map(|r| vec![self.suite.clone(), r.label.clone(), r.n.to_string(), r.trial.to_string(), cell(r.value)])
            .collect();
        Ok(io::render_csv(&header, &rows)?)
    }

    pub fn write_raw(&self, path: &Path) -> HarnessResult<()> {
        let text = self.raw_csv()?;
        std::fs::write(path, text).map_err(|source| {
            HarnessError::Io(IoError::File {
                path: path.display().to_string(),
                source,
            })
        })
    }
}

impl Tabular for SuiteReport {
    fn csv_header(&self) -> Vec<String> {
        ["suite", "label", "n", "count", "mean", "variance", "ks", "pass"]
            .map(String::from)
            .into()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.suite.clone(),
                    r.label.clone(),
                    r.n.to_string(),
                    r.count.to_string(),
                    cell(r.mean),
                    cell(r.variance),
                    optional_cell(r.ks),
                    r.pass.map(|p| p.to_string()).unwrap_or_default(),
                ]
            })
            .collect()
    }
}

/// Runs one suite; checks `cancel` between trials.
pub fn run_suite(config: &SuiteConfig, cancel: &AtomicBool) -> HarnessResult<SuiteReport> {
    config.validate()?;
    let model = config.model.load()?;
    let start = Instant::now();
    let report = match config.suite {
        SuiteKind::ExponentialLaw => exponential_law_suite(config, &model, cancel),
        SuiteKind::Consistency => consistency_suite(config, &model, cancel),
        SuiteKind::Clt => clt_suite(config, &model, cancel),
        SuiteKind::Ldp => ldp_suite(config, &model, cancel),
        SuiteKind::SignCalibration => sign_calibration_suite(config, &model, cancel),
    }?;
    let mut report = report.finish();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn run_all(configs: &[SuiteConfig], cancel: &AtomicBool) -> HarnessResult<Vec<SuiteReport>> {
    configs.iter().map(|c| run_suite(c, cancel)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ks_of_exact_quantiles_is_half_step() {
        let n = 40;
        let sample: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn ks_of_point_mass_against_normal() {
        let d = ks_statistic(&[0.0; 25], irrev_core::stats::normal_cdf);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mut sorted = sample.clone();
        sorted.sort_by(f64::total_cmp);
        // sup over the jump points of the empirical CDF, evaluated directly
        let mut direct: f64 = 0.0;
        for (i, &x) in sorted.iter().enumerate() {
            let below = sorted.iter().filter(|&&y| y < x).count() as f64 / 1000.0;
            let at = sorted.iter().filter(|&&y| y <= x).count() as f64 / 1000.0;
            direct = direct.max((at - x).abs()).max((x - below).abs());
            let _ = i;
        }
        assert!((ks_statistic(&sample, |x| x) - direct).abs() < 1e-15);
    }

    #[test]
    fn seeds_depend_on_every_part() {
        let s = trial_seed(7, "clt", 3);
        assert_eq!(s, trial_seed(7, "clt", 3));
        assert_ne!(s, trial_seed(8, "clt", 3));
        assert_ne!(s, trial_seed(7, "ldp", 3));
        assert_ne!(s, trial_seed(7, "clt", 4));
    }

    #[test]
    fn config_invariants() {
        let mut c = SuiteConfig::new(SuiteKind::Clt);
        assert!(c.validate().is_ok());
        c.trials = 99;
        assert!(c.validate().is_err());
        c.trials = 100;
        c.n_values = vec![400, 200];
        assert!(c.validate().is_err());
        let mut l = SuiteConfig::new(SuiteKind::Ldp);
        l.p_grid = vec![0.9];
        assert!(l.validate().is_err());
    }

    #[test]
    fn model_specs_round_trip() {
        for text in ["cyclic:0.5:0.25", "iid:2", "symmetric", "models/m.json"] {
            assert_eq!(ModelSpec::parse(text).unwrap().to_string(), text);
        }
        assert_eq!(
            ModelSpec::parse("cyclic").unwrap(),
            ModelSpec::Cyclic {
                forward: 0.5,
                backward: 0.25
            }
        );
        assert!(ModelSpec::Symmetric.load().unwrap().entropy_production_exact(&[0, 1, 2]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cancelled_trials_are_skipped() {
        let cancel = AtomicBool::new(true);
        let out = run_trials(5, &cancel, |i| Ok(i)).unwrap();
        assert!(out.iter().all(Option::is_none));
    }
}
