//! Command-line front end. Parsing produces an [`Invocation`]; [`execute`]
//! loads its inputs and hands typed requests to a [`Backend`], so every
//! subcommand is a thin adapter over one library call.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand, ValueEnum};
use irrev_core::estimators::{self, Decision, EstimateReport, EstimatorKind, TestMethod, TestReport, DEFAULT_ALPHA, DEFAULT_CAP};
use irrev_core::matching::{self, TimeKind, TimeRecord};
use irrev_core::model::{Alphabet, MarkovModel, Trajectory};
use irrev_core::{oracle, sampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::{self, HarnessError, ModelSpec, SuiteConfig, SuiteKind, SuiteReport, Thresholds, TimeSource};
use crate::io::{self, cell, optional_cell, Format, IoError, Tabular};

/// `--version` text: crate version and model-hash algorithm.
pub const VERSION: &str = "0.1.0 (model hash sha256-64/15sig)";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const REJECT: i32 = 2;
    pub const INDETERMINATE: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const SUITE_FAILED: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Core(#[from] irrev_core::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::Core(e) | CliError::Io(IoError::Core(e)) | CliError::Harness(HarnessError::Core(e)) => Some(e),
            _ => None,
        };
        match core {
            Some(irrev_core::Error::Numeric(_)) => exit::NUMERIC,
            Some(irrev_core::Error::Indeterminate(_)) => exit::INDETERMINATE,
            _ => exit::USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "irrev", version = VERSION, about = "Entropy production from hitting, return and waiting times")]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model file, or one of `cyclic`, `cyclic:<fwd>:<back>`, `iid:<m>`, `symmetric`.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated tokens, for trajectories read without a model.
    #[arg(long, global = true)]
    alphabet: Option<String>,
    /// Scan budget in positions.
    #[arg(long, global = true)]
    cap: Option<u64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Hit,
    Return,
    Waiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WhichArg {
    #[value(name = "H", alias = "h")]
    H,
    #[value(name = "W", alias = "w")]
    W,
    #[value(name = "dual")]
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Sign,
    Threshold,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Simulate a stationary trajectory.
    Simulate {
        #[arg(long)]
        length: usize,
    },
    /// Hitting, return or waiting times of one word.
    Times {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        trajectory: PathBuf,
        /// Word length; the word is the trajectory prefix.
        #[arg(long)]
        n: Option<usize>,
        /// Word to search for (`hit` only).
        #[arg(long)]
        word: Option<String>,
        /// Trajectory searched for waiting times.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// One entropy-production estimate.
    Estimate {
        #[arg(long, value_enum)]
        which: WhichArg,
        #[arg(long)]
        n: usize,
        /// One trajectory (H, dual) or word source then target (W).
        #[arg(long, num_args = 1..=2)]
        trajectory: Vec<PathBuf>,
    },
    /// Exact SCGF, rate function and variance of a model.
    Oracle {
        #[arg(long, default_value_t = 41)]
        scgf_grid: usize,
        #[arg(long, default_value_t = 41)]
        rate_grid: usize,
    },
    /// Run one validation suite.
    Validate {
        #[arg(long, value_enum)]
        suite: Option<SuiteKind>,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        time_source: Option<TimeSource>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p_grid: Vec<f64>,
        #[arg(long)]
        words: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        reversed_trials: Option<usize>,
        /// Per-trial CSV (suite,label,n,trial,value).
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Test the reversibility hypothesis.
    Test {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        n: usize,
        /// Sign test: word source and target trajectories, alternating.
        /// Threshold test: one trajectory.
        #[arg(long)]
        trajectory: Vec<PathBuf>,
        /// Pairs drawn from `--model` for the sign test.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        c_thr: Option<f64>,
    },
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub alphabet: Option<Vec<String>>,
    pub cap: Option<u64>,
    pub alpha: Option<f64>,
    pub c_thr: Option<f64>,
    pub pairs: Option<usize>,
    pub validate: Option<ValidateSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub suite: Option<SuiteKind>,
    pub n: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub time_source: Option<TimeSource>,
    pub p_grid: Option<Vec<f64>>,
    pub words: Option<usize>,
    pub replications: Option<usize>,
    pub reversed_trials: Option<usize>,
    pub raw: Option<PathBuf>,
    pub thresholds: Option<Thresholds>,
}

/// Effective global settings after merging flags, config file and defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub model: Option<ModelSpec>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub alphabet: Option<Vec<String>>,
    pub cap: u64,
}

impl Settings {
    fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        m.insert("cap".into(), self.cap.to_string());
        m.insert("format".into(), format!("{:?}", self.format).to_lowercase());
        if let Some(model) = &self.model {
            m.insert("model".into(), model.to_string());
        }
        if let Some(a) = &self.alphabet {
            m.insert("alphabet".into(), a.join(","));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Simulate {
        length: usize,
    },
    Times {
        kind: TimeKind,
        trajectory: PathBuf,
        n: Option<usize>,
        word: Option<String>,
        target: Option<PathBuf>,
    },
    Estimate {
        which: EstimatorKind,
        n: usize,
        trajectories: Vec<PathBuf>,
    },
    Oracle {
        scgf_points: usize,
        rate_points: usize,
    },
    Validate {
        config: Box<SuiteConfig>,
    },
    Test {
        method: TestMethod,
        n: usize,
        trajectories: Vec<PathBuf>,
        pairs: usize,
        alpha: f64,
        c_thr: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub settings: Settings,
    pub command: Command,
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn read_config(path: &Path) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parses arguments (without the program name) into a validated invocation.
/// Help and version requests come back as `Err(clap::Error)` for the caller
/// to print.
pub fn parse_args<I, S>(argv: I) -> Result<CliResult<Invocation>, clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("irrev")).chain(argv.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(args)?;
    Ok(resolve(cli))
}

fn resolve(cli: Cli) -> CliResult<Invocation> {
    let file = match &cli.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let model = match cli.model.or(file.model.clone()) {
        Some(m) => Some(ModelSpec::parse(&m).map_err(CliError::Usage)?),
        None => None,
    };
    let alphabet = match cli.alphabet {
        Some(a) => Some(a.split(',').map(str::to_owned).collect()),
        None => file.alphabet.clone(),
    };
    let settings = Settings {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        model,
        out: cli.out.or(file.out.clone()),
        format: cli.format.or(file.format).unwrap_or_default(),
        alphabet,
        cap: cli.cap.or(file.cap).unwrap_or(DEFAULT_CAP),
    };
    let has_model = settings.model.is_some();
    let command = match cli.command {
        Sub::Simulate { length } => {
            if !has_model {
                return usage("simulate needs --model");
            }
            Command::Simulate { length }
        }
        Sub::Times {
            kind,
            trajectory,
            n,
            word,
            target,
        } => {
            let kind = match kind {
                KindArg::Hit => TimeKind::Hit,
                KindArg::Return => TimeKind::Return,
                KindArg::Waiting => TimeKind::Waiting,
            };
            match kind {
                TimeKind::Hit if word.is_none() => return usage("times --kind hit needs --word"),
                TimeKind::Waiting if target.is_none() => return usage("times --kind waiting needs --target"),
                TimeKind::Return | TimeKind::Waiting if n.is_none() => return usage("times needs --n"),
                _ => {}
            }
            Command::Times {
                kind,
                trajectory,
                n,
                word,
                target,
            }
        }
        Sub::Estimate { which, n, trajectory } => {
            let which = match which {
                WhichArg::H => EstimatorKind::H,
                WhichArg::W => EstimatorKind::W,
                WhichArg::Dual => EstimatorKind::Dual,
            };
            let needed = if which == EstimatorKind::W { 2 } else { 1 };
            if trajectory.is_empty() && !has_model {
                return usage(format!(
                    "estimate --which {} needs --model or {needed} trajectory path(s)",
                    which.as_str()
                ));
            }
            if !trajectory.is_empty() && trajectory.len() != needed {
                return usage(format!(
                    "estimate --which {} takes {needed} trajectory path(s), got {}",
                    which.as_str(),
                    trajectory.len()
                ));
            }
            Command::Estimate {
                which,
                n,
                trajectories: trajectory,
            }
        }
        Sub::Oracle { scgf_grid, rate_grid } => {
            if !has_model {
                return usage("oracle needs --model");
            }
            if scgf_grid < 3 || rate_grid < 1 {
                return usage("oracle needs --scgf-grid >= 3 and --rate-grid >= 1");
            }
            Command::Oracle {
                scgf_points: scgf_grid,
                rate_points: rate_grid,
            }
        }
        Sub::Validate {
            suite,
            n,
            trials,
            time_source,
            p_grid,
            words,
            replications,
            reversed_trials,
            raw,
        } => {
            let section = file.validate.clone().unwrap_or_default();
            let Some(kind) = suite.or(section.suite) else {
                return usage("validate needs --suite");
            };
            let mut c = SuiteConfig::new(kind);
            c.base_seed = settings.seed;
            c.cap = settings.cap;
            c.output = settings.out.clone();
            if let Some(m) = &settings.model {
                c.model = m.clone();
            }
            if let Some(t) = section.thresholds {
                c.thresholds = t;
            }
            if let Some(a) = file.alpha {
                c.thresholds.alpha = a;
            }
            let pick_vec = |flag: Vec<usize>, file: Option<Vec<usize>>| (!flag.is_empty()).then_some(flag).or(file);
            if let Some(n) = pick_vec(n, section.n) {
                c.n_values = n;
            }
            if let Some(p) = (!p_grid.is_empty()).then_some(p_grid).or(section.p_grid) {
                c.p_grid = p;
            }
            c.trials = trials.or(section.trials).unwrap_or(c.trials);
            c.time_source = time_source.or(section.time_source).unwrap_or(c.time_source);
            c.words = words.or(section.words).unwrap_or(c.words);
            c.replications = replications.or(section.replications).unwrap_or(c.replications);
            c.reversed_trials = reversed_trials.or(section.reversed_trials).unwrap_or(c.reversed_trials);
            c.raw_output = raw.or(section.raw);
            c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Command::Validate { config: Box::new(c) }
        }
        Sub::Test {
            method,
            n,
            trajectory,
            pairs,
            alpha,
            c_thr,
        } => {
            let alpha = alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
            let c_thr = c_thr.or(file.c_thr);
            let pairs = pairs.or(file.pairs).unwrap_or(estimators::MIN_SIGN_PAIRS);
            let method = match method {
                MethodArg::Sign => {
                    if trajectory.is_empty() && !has_model {
                        return usage("sign test needs --model or trajectory pairs");
                    }
                    if trajectory.len() % 2 == 1 {
                        return usage("sign test takes trajectories in (source, target) pairs");
                    }
                    TestMethod::Sign
                }
                MethodArg::Threshold => {
                    if trajectory.len() != 1 {
                        return usage("threshold test takes exactly one --trajectory");
                    }
                    if c_thr.is_none() {
                        return usage("threshold test needs --c-thr");
                    }
                    TestMethod::Threshold
                }
            };
            Command::Test {
                method,
                n,
                trajectories: trajectory,
                pairs,
                alpha,
                c_thr,
            }
        }
    };
    Ok(Invocation { settings, command })
}

/// Where the symbols of an estimate or test come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Trajectories(Vec<Vec<u8>>),
    Model { model: MarkovModel, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimesRequest {
    pub kind: TimeKind,
    pub trajectory: Vec<u8>,
    pub word: Option<Vec<u8>>,
    pub n: Option<usize>,
    pub target: Option<Vec<u8>>,
    pub cap: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRequest {
    pub which: EstimatorKind,
    pub n: usize,
    pub cap: u64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRequest {
    pub method: TestMethod,
    pub n: usize,
    pub cap: u64,
    pub alpha: f64,
    pub c_thr: Option<f64>,
    pub pairs: usize,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub scgf_grid: Vec<f64>,
    pub rate_points: usize,
    pub waiting_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub model_id: String,
    pub mep: f64,
    pub sigma2: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub symmetry_residual_max: f64,
    pub sigma2_checks: oracle::Sigma2Report,
    pub scgf: oracle::ScgfCurve,
    pub rate: oracle::RateCurve,
}

/// Library calls behind each subcommand.
pub trait Backend {
    fn simulate(&mut self, model: &MarkovModel, length: usize, seed: u64) -> CliResult<Trajectory>;
    fn times(&mut self, req: &TimesRequest) -> CliResult<Vec<TimeRecord>>;
    fn estimate(&mut self, req: &EstimateRequest) -> CliResult<EstimateReport>;
    fn oracle(&mut self, model: &MarkovModel, req: &OracleRequest) -> CliResult<OracleSummary>;
    fn validate(&mut self, config: &SuiteConfig, cancel: &AtomicBool) -> CliResult<SuiteReport>;
    fn test(&mut self, req: &TestRequest) -> CliResult<TestReport>;
}

/// The real backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct Library;

fn model_estimate(which: EstimatorKind, model: &MarkovModel, n: usize, rng: &mut ChaCha8Rng) -> CliResult<EstimateReport> {
    Ok(match which {
        EstimatorKind::W => {
            let (_, pair) = sampler::sample_waiting_pair(model, n, rng)?;
            EstimateReport::from_log_times(which, n, pair.ln_minus, pair.ln_plus)
        }
        EstimatorKind::H => {
            let (_, pair) = sampler::sample_return_pair(model, n, rng)?;
            EstimateReport::from_log_times(which, n, pair.ln_minus, pair.ln_plus)
        }
        EstimatorKind::Dual => {
            let word = sampler::draw_word(model, n, rng);
            estimators::estimate_dual(&word, n)?
        }
    })
}

impl Backend for Library {
    fn simulate(&mut self, model: &MarkovModel, length: usize, seed: u64) -> CliResult<Trajectory> {
        Ok(model.simulate(length, seed)?)
    }

    fn times(&mut self, req: &TimesRequest) -> CliResult<Vec<TimeRecord>> {
        Ok(match req.kind {
            TimeKind::Hit => {
                let word = req.word.as_deref().unwrap_or_default();
                vec![matching::hitting_time(&req.trajectory, word, req.cap)?]
            }
            TimeKind::Return => {
                let (plus, minus) = matching::return_pair(&req.trajectory, req.n.unwrap_or(0), req.cap)?;
                vec![plus, minus]
            }
            TimeKind::Waiting => {
                let target = req.target.as_deref().unwrap_or_default();
                let (plus, minus) = matching::waiting_times(&req.trajectory, target, req.n.unwrap_or(0), req.cap)?;
                vec![plus, minus]
            }
        })
    }

    fn estimate(&mut self, req: &EstimateRequest) -> CliResult<EstimateReport> {
        let (n, cap) = (req.n, req.cap);
        match &req.source {
            Source::Trajectories(t) => Ok(match req.which {
                EstimatorKind::H => estimators::estimate_h(&t[0], n, cap)?,
                EstimatorKind::W => estimators::estimate_w(&t[0], &t[1], n, cap)?,
                EstimatorKind::Dual => estimators::estimate_dual(&t[0], n)?,
            }),
            Source::Model { model, seed } => model_estimate(req.which, model, n, &mut ChaCha8Rng::seed_from_u64(*seed)),
        }
    }

    fn oracle(&mut self, model: &MarkovModel, req: &OracleRequest) -> CliResult<OracleSummary> {
        let sigma2_checks = oracle::sigma2_report(model)?;
        let (c_minus, c_plus) = oracle::scgf_endpoints(model)?;
        let symmetry = oracle::symmetry_report(model, &req.waiting_grid, &req.scgf_grid)?;
        let rate_grid = if c_plus > c_minus {
            oracle::linspace(c_minus, c_plus, req.rate_points)
        } else {
            vec![c_minus; 1]
        };
        Ok(OracleSummary {
            model_id: model.model_id(),
            mep: oracle::mep_exact(model),
            sigma2: sigma2_checks.second_derivative,
            c_minus,
            c_plus,
            symmetry_residual_max: symmetry.max_residual(),
            sigma2_checks,
            scgf: oracle::scgf_curve(model, &req.scgf_grid)?,
            rate: oracle::rate_curve(model, &rate_grid)?,
        })
    }

    fn validate(&mut self, config: &SuiteConfig, cancel: &AtomicBool) -> CliResult<SuiteReport> {
        Ok(harness::run_suite(config, cancel)?)
    }

    fn test(&mut self, req: &TestRequest) -> CliResult<TestReport> {
        let (n, cap) = (req.n, req.cap);
        match (&req.source, req.method) {
            (Source::Trajectories(t), TestMethod::Sign) => {
                let pairs: Vec<(&[u8], &[u8])> = t.chunks(2).map(|c| (c[0].as_slice(), c[1].as_slice())).collect();
                Ok(estimators::test_reversibility_sign(&pairs, n, cap, req.alpha)?)
            }
            (Source::Trajectories(t), TestMethod::Threshold) => Ok(estimators::test_reversibility_threshold(
                &t[0],
                n,
                cap,
                req.c_thr.unwrap_or(f64::NAN),
            )?),
            (Source::Model { model, seed }, TestMethod::Sign) => {
                let estimates = (0..req.pairs as u64)
                    .map(|i| model_estimate(EstimatorKind::W, model, n, &mut harness::trial_rng(*seed, "test", i)))
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(estimators::sign_test(&estimates, n, cap, req.alpha)?)
            }
            (Source::Model { .. }, TestMethod::Threshold) => {
                Err(CliError::Usage("threshold test needs a trajectory".into()))
            }
        }
    }
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    settings: &'a BTreeMap<String, String>,
    #[serde(flatten)]
    body: &'a T,
}

/// A serializable body plus its CSV form, with the effective settings echoed
/// into both.
struct Rendered<'a, T: Serialize> {
    settings: BTreeMap<String, String>,
    body: &'a T,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl<T: Serialize> Serialize for Rendered<'_, T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Echo {
            settings: &self.settings,
            body: self.body,
        }
        .serialize(s)
    }
}

impl<T: Serialize> Tabular for Rendered<'_, T> {
    fn csv_header(&self) -> Vec<String> {
        let mut h = self.header.clone();
        h.push("settings".into());
        h
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let echo = io::describe(&self.settings);
        self.rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.push(echo.clone());
                r
            })
            .collect()
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn estimate_row(e: &EstimateReport) -> Vec<String> {
    vec![
        e.estimator.as_str().into(),
        e.n.to_string(),
        cell(e.raw),
        cell(e.per_symbol),
        format!("{:?}", e.bound).to_lowercase(),
        e.censored.to_string(),
        e.caps_used.to_string(),
    ]
}

fn test_row(t: &TestReport) -> Vec<String> {
    vec![
        format!("{:?}", t.method).to_lowercase(),
        cell(t.statistic),
        optional_cell(t.p_value),
        match t.decision {
            Decision::RejectReversibility => "reject_reversibility",
            Decision::NoEvidence => "no_evidence",
            Decision::Indeterminate => "indeterminate",
        }
        .into(),
        t.n.to_string(),
        t.m.to_string(),
        t.cap.to_string(),
        optional_cell(t.alpha),
        optional_cell(t.c_thr),
        t.dropped.to_string(),
    ]
}

fn time_row(r: &TimeRecord) -> Vec<String> {
    vec![
        r.kind.as_str().into(),
        r.word_len.to_string(),
        r.outcome.bound().to_string(),
        r.outcome.is_censored().to_string(),
        r.scanned.to_string(),
    ]
}

/// Infers a compact alphabet (sorted distinct characters) from a trajectory file.
fn infer_alphabet(paths: &[PathBuf]) -> CliResult<Alphabet> {
    let mut chars = std::collections::BTreeSet::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| IoError::File {
            path: p.display().to_string(),
            source,
        })?;
        chars.extend(text.chars().filter(|c| !c.is_whitespace()));
    }
    if chars.is_empty() {
        return Err(IoError::Empty.into());
    }
    Ok(Alphabet::new(chars.into_iter().map(String::from))?)
}

fn alphabet_for(settings: &Settings, model: Option<&MarkovModel>, paths: &[PathBuf]) -> CliResult<Alphabet> {
    if let Some(tokens) = &settings.alphabet {
        return Ok(Alphabet::new(tokens.clone())?);
    }
    match model {
        Some(m) => Ok(m.alphabet().clone()),
        None => infer_alphabet(paths),
    }
}

fn load_all(paths: &[PathBuf], alphabet: &Alphabet) -> CliResult<Vec<Vec<u8>>> {
    paths
        .iter()
        .map(|p| Ok(io::ingest_trajectory(p, alphabet)?.symbols))
        .collect()
}

/// What `execute` produced: the text to emit and the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

fn decision_code(d: Decision) -> i32 {
    match d {
        Decision::RejectReversibility => exit::REJECT,
        Decision::NoEvidence => exit::OK,
        Decision::Indeterminate => exit::INDETERMINATE,
    }
}

/// Loads inputs, calls the backend once and renders the result.
pub fn execute(inv: &Invocation, backend: &mut dyn Backend, cancel: &AtomicBool) -> CliResult<Outcome> {
    let s = &inv.settings;
    let model = match &s.model {
        Some(spec) => Some(spec.load()?),
        None => None,
    };
    let echo = s.echo();
    let render = |body: &dyn erased::Body, head: &[&str], rows: Vec<Vec<String>>| -> CliResult<String> {
        body.render(echo.clone(), header(head), rows, s.format)
    };
    match &inv.command {
        Command::Simulate { length } => {
            let model = model.as_ref().expect("checked at parse time");
            let t = backend.simulate(model, *length, s.seed)?;
            Ok(Outcome {
                text: io::trajectory_to_string(&t.symbols, model.alphabet()),
                code: exit::OK,
            })
        }
        Command::Times {
            kind,
            trajectory,
            n,
            word,
            target,
        } => {
            let mut paths = vec![trajectory.clone()];
            paths.extend(target.iter().cloned());
            let alphabet = alphabet_for(s, model.as_ref(), &paths)?;
            let data = load_all(&paths, &alphabet)?;
            let word = match word {
                Some(w) => Some(alphabet.parse_block(w)?),
                None => None,
            };
            let req = TimesRequest {
                kind: *kind,
                trajectory: data[0].clone(),
                word,
                n: *n,
                target: data.get(1).cloned(),
                cap: s.cap,
            };
            let records = backend.times(&req)?;
            let rows = records.iter().map(time_row).collect();
            let text = render(&records, &["kind", "n", "value", "censored", "scanned"], rows)?;
            Ok(Outcome { text, code: exit::OK })
        }
        Command::Estimate { which, n, trajectories } => {
            let source = if trajectories.is_empty() {
                Source::Model {
                    model: model.clone().expect("checked at parse time"),
                    seed: s.seed,
                }
            } else {
                let alphabet = alphabet_for(s, model.as_ref(), trajectories)?;
                Source::Trajectories(load_all(trajectories, &alphabet)?)
            };
            let req = EstimateRequest {
                which: *which,
                n: *n,
                cap: s.cap,
                source,
            };
            let e = backend.estimate(&req)?;
            let text = render(
                &e,
                &["estimator", "n", "raw", "per_symbol", "bound", "censored", "caps_used"],
                vec![estimate_row(&e)],
            )?;
            let code = if e.bound == irrev_core::Bound::Indeterminate {
                exit::INDETERMINATE
            } else {
                exit::OK
            };
            Ok(Outcome { text, code })
        }
        Command::Oracle {
            scgf_points,
            rate_points,
        } => {
            let model = model.as_ref().expect("checked at parse time");
            let req = OracleRequest {
                scgf_grid: oracle::linspace(-1.5, 0.5, *scgf_points),
                rate_points: *rate_points,
                waiting_grid: oracle::linspace(-0.9, 0.0, 10),
            };
            let summary = backend.oracle(model, &req)?;
            let rows = (0..summary.scgf.grid.len())
                .map(|i| vec![cell(summary.scgf.grid[i]), cell(summary.scgf.values[i]), cell(summary.scgf.derivative[i])])
                .collect();
            let text = render(&summary, &["p", "value", "derivative"], rows)?;
            Ok(Outcome { text, code: exit::OK })
        }
        Command::Validate { config } => {
            let report = backend.validate(config, cancel)?;
            if let Some(raw) = &config.raw_output {
                report.write_raw(raw)?;
            }
            let text = io::render_report(&report, s.format)?;
            let code = if !report.complete {
                exit::INDETERMINATE
            } else if report.pass {
                exit::OK
            } else {
                exit::SUITE_FAILED
            };
            Ok(Outcome { text, code })
        }
        Command::Test {
            method,
            n,
            trajectories,
            pairs,
            alpha,
            c_thr,
        } => {
            let source = if trajectories.is_empty() {
                Source::Model {
                    model: model.clone().expect("checked at parse time"),
                    seed: s.seed,
                }
            } else {
                let alphabet = alphabet_for(s, model.as_ref(), trajectories)?;
                Source::Trajectories(load_all(trajectories, &alphabet)?)
            };
            let req = TestRequest {
                method: *method,
                n: *n,
                cap: s.cap,
                alpha: *alpha,
                c_thr: *c_thr,
                pairs: *pairs,
                source,
            };
            let t = backend.test(&req)?;
            let text = render(
                &t,
                &["method", "statistic", "p_value", "decision", "n", "m", "cap", "alpha", "c_thr", "dropped"],
                vec![test_row(&t)],
            )?;
            Ok(Outcome {
                text,
                code: decision_code(t.decision),
            })
        }
    }
}

mod erased {
    use super::*;

    /// Object-safe rendering for the different report bodies.
    pub trait Body {
        fn render(&self, settings: BTreeMap<String, String>, header: Vec<String>, rows: Vec<Vec<String>>, format: Format) -> CliResult<String>;
    }

    impl<T: Serialize> Body for T {
        fn render(&self, settings: BTreeMap<String, String>, header: Vec<String>, rows: Vec<Vec<String>>, format: Format) -> CliResult<String> {
            let r = Rendered {
                settings,
                body: self,
                header,
                rows,
            };
            Ok(io::render_report(&r, format)?)
        }
    }
}

/// Full command-line run: parse, execute, write output. Returns the exit code.
pub fn run<I, S>(argv: I, backend: &mut dyn Backend, cancel: &AtomicBool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let inv = match parse_args(argv) {
        Ok(Ok(inv)) => inv,
        Ok(Err(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match execute(&inv, backend, cancel) {
        Ok(out) => {
            let written = match &inv.settings.out {
                Some(path) => std::fs::write(path, out.text.as_bytes()).map_err(|source| IoError::File {
                    path: path.display().to_string(),
                    source,
                }),
                None => stdout.write_all(out.text.as_bytes()).map_err(|source| IoError::File {
                    path: "<stdout>".into(),
                    source,
                }),
            };
            match written {
                Ok(()) => out.code,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    exit::USAGE
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> CliResult<Invocation> {
        parse_args(args.iter().copied()).expect("clap accepts")
    }

    #[test]
    fn oracle_grid_flag() {
        let inv = parse(&["oracle", "--model", "m.json", "--scgf-grid", "41"]).unwrap();
        assert_eq!(
            inv.command,
            Command::Oracle {
                scgf_points: 41,
                rate_points: 41
            }
        );
        assert_eq!(inv.settings.model, Some(ModelSpec::File("m.json".into())));
    }

    #[test]
    fn waiting_estimate_without_data_is_usage_error() {
        let err = parse(&["estimate", "--which", "W", "--n", "10"]).unwrap_err();
        assert_eq!(err.exit_code(), exit::USAGE);
        let err = parse(&["estimate", "--which", "W", "--n", "10", "--trajectory", "a.txt"]).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(parse(&["estimate", "--which", "W", "--n", "10", "--trajectory", "a", "b"]).is_ok());
    }

    #[test]
    fn validate_builds_suite_config() {
        let inv = parse(&["validate", "--suite", "clt", "--n", "500", "--trials", "1000", "--seed", "7"]).unwrap();
        let Command::Validate { config } = inv.command else {
            panic!("not a validate command")
        };
        assert_eq!(config.suite, SuiteKind::Clt);
        assert_eq!(config.n_values, vec![500]);
        assert_eq!(config.trials, 1000);
        assert_eq!(config.base_seed, 7);
    }

    #[test]
    fn unknown_flags_and_missing_subcommand_are_rejected() {
        assert!(parse_args(["oracle", "--model", "m.json", "--bogus"]).is_err());
        assert!(parse_args(Vec::<String>::new()).is_err());
    }

    #[test]
    fn version_names_hash_algorithm() {
        assert!(VERSION.starts_with(env!("CARGO_PKG_VERSION")));
        assert!(VERSION.contains(irrev_core::model::MODEL_HASH_ALGORITHM));
    }
}
