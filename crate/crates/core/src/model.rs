//! Strictly positive finite-order Markov chains over a finite alphabet.
//!
//! A chain of order `r` over `m` symbols lives on `m^r` states. State
//! `u = (a_1, ..., a_r)` is indexed as `sum_i a_i m^(r-i)`, so the most recent
//! symbol is the least significant digit and symbol `b` moves `u` to
//! `(u * m + b) % m^r`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, next_state};

/// Largest supported chain order.
pub const MAX_ORDER: usize = 4;
/// Largest supported number of lifted states `m^r`.
pub const MAX_STATES: usize = 256;
/// Tolerance on row sums and on the stationary law.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Identifier of the content hash behind [`MarkovModel::model_id`].
pub const MODEL_HASH_ALGORITHM: &str = "sha256-64/15sig";

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::Validation("alphabet needs at least two symbols".into()));
        }
        if symbols.len() > MAX_STATES {
            return Err(Error::Validation(format!(
                "alphabet has {} symbols, at most {MAX_STATES} are supported",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Validation(format!("symbol {i} is empty")));
            }
            if s.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("symbol {s:?} contains whitespace")));
            }
            if symbols[..i].contains(s) {
                return Err(Error::Validation(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// Alphabet `{"0", "1", ..., "m-1"}`.
    pub fn numeric(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: u8) -> &str {
        &self.symbols[index as usize]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index(&self, token: &str) -> Option<u8> {
        self.symbols.iter().position(|s| s == token).map(|i| i as u8)
    }

    /// True when every token is a single character, which enables the compact
    /// one-line trajectory format and concatenated state keys.
    pub fn is_single_char(&self) -> bool {
        self.symbols.iter().all(|s| s.chars().count() == 1)
    }

    /// Renders a block of indices: concatenated for single-character
    /// alphabets, comma separated otherwise.
    pub fn render(&self, symbols: &[u8]) -> String {
        let sep = if self.is_single_char() { "" } else { "," };
        let mut out = String::new();
        for (i, &s) in symbols.iter().enumerate() {
            if i > 0 {
                out.push_str(sep);
            }
            out.push_str(self.symbol(s));
        }
        out
    }

    /// Inverse of [`Alphabet::render`]. Comma-separated input is accepted for
    /// every alphabet.
    pub fn parse_block(&self, text: &str) -> Result<Vec<u8>> {
        let lookup = |tok: &str| {
            self.index(tok)
                .ok_or_else(|| Error::Validation(format!("unknown symbol {tok:?}")))
        };
        if text.contains(',') || !self.is_single_char() {
            text.split(',').map(|t| lookup(t.trim())).collect()
        } else {
            let mut buf = [0u8; 4];
            text.chars().map(|c| lookup(c.encode_utf8(&mut buf))).collect()
        }
    }
}

/// A finite block of alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(symbols: Vec<u8>, alphabet_size: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Validation("a word has at least one symbol".into()));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= alphabet_size) {
            return Err(Error::Validation(format!(
                "symbol index {bad} outside alphabet of size {alphabet_size}"
            )));
        }
        Ok(Word(symbols))
    }

    pub fn reversed(&self) -> Word {
        Word(self.0.iter().rev().copied().collect())
    }

    pub fn is_palindrome(&self) -> bool {
        self.0.iter().eq(self.0.iter().rev())
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl Deref for Word {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

/// A realized symbol sequence. `seed` and `model_id` are present for
/// simulated data and absent for ingested data.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Trajectory {
    pub symbols: Vec<u8>,
    pub seed: Option<u64>,
    pub model_id: Option<String>,
}

impl Trajectory {
    pub fn from_symbols(symbols: Vec<u8>) -> Self {
        Trajectory {
            symbols,
            seed: None,
            model_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

impl Deref for Trajectory {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.symbols
    }
}

fn validate_table(transitions: &[f64], m: usize, order: usize) -> Result<usize> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Validation(format!(
            "order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let states = m
        .checked_pow(order as u32)
        .filter(|&s| s <= MAX_STATES)
        .ok_or_else(|| {
            Error::Validation(format!(
                "{m}^{order} lifted states exceeds the supported {MAX_STATES}"
            ))
        })?;
    if transitions.len() != states * m {
        return Err(Error::Validation(format!(
            "transition table has {} entries, expected {}",
            transitions.len(),
            states * m
        )));
    }
    for (u, row) in transitions.chunks(m).enumerate() {
        if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Validation(format!(
                "row {u} has a non-positive or non-finite probability {p}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!("row {u} sums to {sum}, not 1")));
        }
    }
    Ok(states)
}

/// Stationary law of the lifted chain on `m^order` states.
///
/// Power iteration to a relative change of `1e-14` (at most `10^6` sweeps),
/// falling back to a dense linear solve when the iteration stalls or leaves a
/// residual above `1e-12`.
pub fn stationary_distribution(transitions: &[f64], m: usize, order: usize) -> Result<Vec<f64>> {
    let states = validate_table(transitions, m, order)?;
    let residual = |pi: &[f64]| {
        let mut next = vec![0.0; states];
        linalg::apply_left(m, transitions, pi, &mut next);
        next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };

    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    let mut converged = false;
    for _ in 0..1_000_000 {
        linalg::apply_left(m, transitions, &pi, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        core::mem::swap(&mut pi, &mut next);
        if change < 1e-14 {
            converged = true;
            break;
        }
    }
    if converged && residual(&pi) < STOCHASTIC_TOL && pi.iter().all(|&x| x > 0.0) {
        return Ok(pi);
    }

    // (P^T - I) x = 0 with the last equation replaced by sum(x) = 1
    let mut a = vec![0.0; states * states];
    for u in 0..states {
        for b in 0..m {
            let v = next_state(u, b, m, states);
            a[v * states + u] += transitions[u * m + b];
        }
        a[u * states + u] -= 1.0;
    }
    for u in 0..states {
        a[(states - 1) * states + u] = 1.0;
    }
    let mut rhs = vec![0.0; states];
    rhs[states - 1] = 1.0;
    linalg::solve_dense(&mut a, &mut rhs)
        .ok_or_else(|| Error::Numeric("stationary linear system is singular".into()))?;
    let total: f64 = rhs.iter().sum();
    rhs.iter_mut().for_each(|x| *x /= total);
    if rhs.iter().any(|&x| !(x > 0.0)) || residual(&rhs) >= STOCHASTIC_TOL {
        return Err(Error::Numeric("stationary distribution did not converge".into()));
    }
    Ok(rhs)
}

/// Order-`r` stationary Markov chain with strictly positive transitions.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    alphabet: Alphabet,
    order: usize,
    states: usize,
    transitions: Vec<f64>,
    log_transitions: Vec<f64>,
    cumulative: Vec<f64>,
    stationary: Vec<f64>,
    log_stationary: Vec<f64>,
    stationary_cdf: Vec<f64>,
}

impl PartialEq for MarkovModel {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet
            && self.order == other.order
            && self.transitions == other.transitions
    }
}

fn cumulate(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

impl MarkovModel {
    /// `transitions[u * m + b]` is the probability of symbol `b` after state `u`.
    pub fn new(alphabet: Alphabet, order: usize, transitions: Vec<f64>) -> Result<Self> {
        let m = alphabet.len();
        let states = validate_table(&transitions, m, order)?;
        let stationary = stationary_distribution(&transitions, m, order)?;
        let log_transitions = transitions.iter().map(|&p| libm::log(p)).collect();
        let cumulative = transitions.chunks(m).flat_map(cumulate).collect();
        let log_stationary = stationary.iter().map(|&p| libm::log(p)).collect();
        let stationary_cdf = cumulate(&stationary);
        Ok(MarkovModel {
            alphabet,
            order,
            states,
            transitions,
            log_transitions,
            cumulative,
            stationary,
            log_stationary,
            stationary_cdf,
        })
    }

    /// First-order chain from a row-major `m x m` matrix over `{"0", ..., "m-1"}`.
    pub fn from_matrix(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Validation("transition matrix must be square".into()));
        }
        Self::new(Alphabet::numeric(m)?, 1, rows.concat())
    }

    /// Three-state chain stepping `+1` with probability `forward`, `-1` with
    /// probability `backward` and staying put otherwise (indices mod 3).
    pub fn cyclic(forward: f64, backward: f64) -> Result<Self> {
        let stay = 1.0 - forward - backward;
        let mut t = vec![0.0; 9];
        for i in 0..3 {
            t[i * 3 + (i + 1) % 3] = forward;
            t[i * 3 + (i + 2) % 3] = backward;
            t[i * 3 + i] = stay;
        }
        Self::new(Alphabet::numeric(3)?, 1, t)
    }

    /// Independent uniform symbols, written as an order-1 chain.
    pub fn iid_uniform(m: usize) -> Result<Self> {
        Self::new(Alphabet::numeric(m)?, 1, vec![1.0 / m as f64; m * m])
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn log_transitions(&self) -> &[f64] {
        &self.log_transitions
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn log_stationary(&self) -> &[f64] {
        &self.log_stationary
    }

    pub fn transition(&self, state: usize, symbol: u8) -> f64 {
        self.transitions[state * self.alphabet.len() + symbol as usize]
    }

    pub fn log_transition(&self, state: usize, symbol: u8) -> f64 {
        self.log_transitions[state * self.alphabet.len() + symbol as usize]
    }

    pub fn next_state(&self, state: usize, symbol: u8) -> usize {
        next_state(state, symbol as usize, self.alphabet.len(), self.states)
    }

    /// Index of the state formed by the last `order` symbols of `block`.
    pub fn state_of(&self, block: &[u8]) -> usize {
        let m = self.alphabet.len();
        block[block.len() - self.order..]
            .iter()
            .fold(0, |acc, &s| acc * m + s as usize)
    }

    /// Symbols of state `u`, oldest first.
    pub fn state_symbols(&self, state: usize) -> Vec<u8> {
        let m = self.alphabet.len();
        let mut out = vec![0u8; self.order];
        let mut u = state;
        for slot in out.iter_mut().rev() {
            *slot = (u % m) as u8;
            u /= m;
        }
        out
    }

    /// Draws a symbol after `state` by inverting the row CDF at `uniform`.
    pub fn sample_symbol(&self, state: usize, uniform: f64) -> u8 {
        let m = self.alphabet.len();
        let row = &self.cumulative[state * m..state * m + m];
        row.iter().position(|&c| uniform < c).unwrap_or(m - 1) as u8
    }

    /// Draws an initial state from the stationary law.
    pub fn sample_state(&self, uniform: f64) -> usize {
        self.stationary_cdf
            .iter()
            .position(|&c| uniform < c)
            .unwrap_or(self.states - 1)
    }

    /// Content hash over alphabet, order and the transition table rounded to
    /// 15 significant digits, as 16 hex characters.
    pub fn model_id(&self) -> String {
        let mut canonical = String::new();
        for s in self.alphabet.symbols() {
            canonical.push_str(s);
            canonical.push('\u{1f}');
        }
        let _ = write!(canonical, "order={};", self.order);
        for p in &self.transitions {
            let _ = write!(canonical, "{p:.14e};");
        }
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(16);
        for byte in &digest[..8] {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    fn require_len(&self, len: usize) -> Result<()> {
        if len < self.order {
            return Err(Error::Unsupported(format!(
                "word of length {len} is shorter than the chain order {}",
                self.order
            )));
        }
        Ok(())
    }

    /// Natural log of the cylinder probability `P([x_1^n])`, `n >= order`.
    pub fn cylinder_log_prob(&self, word: &[u8]) -> Result<f64> {
        self.require_len(word.len())?;
        if let Some(&bad) = word.iter().find(|&&s| s as usize >= self.alphabet.len()) {
            return Err(Error::Validation(format!("symbol index {bad} outside alphabet")));
        }
        let r = self.order;
        let mut state = self.state_of(&word[..r]);
        let mut lp = self.log_stationary[state];
        for &b in &word[r..] {
            lp += self.log_transition(state, b);
            state = self.next_state(state, b);
        }
        Ok(lp)
    }

    /// Entropy production `log P([x_1^n]) - log P([x_n^1])` of a realized block.
    pub fn entropy_production_exact(&self, word: &[u8]) -> Result<f64> {
        let reversed: Vec<u8> = word.iter().rev().copied().collect();
        Ok(self.cylinder_log_prob(word)? - self.cylinder_log_prob(&reversed)?)
    }

    /// The law of the time-reversed process, again an order-`r` chain.
    ///
    /// With `mu` the stationary `(r+1)`-block law, the reversed chain moves
    /// from `u = (a_1..a_r)` to `b` with probability
    /// `mu(b, a_r, ..., a_1) / pi(a_r, ..., a_1)`.
    pub fn reversed(&self) -> Result<MarkovModel> {
        let m = self.alphabet.len();
        let r = self.order;
        let mut table = vec![0.0; self.states * m];
        for u in 0..self.states {
            let syms = self.state_symbols(u);
            let rev_u: Vec<u8> = syms.iter().rev().copied().collect();
            let denom = self.stationary[self.state_of(&rev_u)];
            let row = &mut table[u * m..u * m + m];
            for (b, slot) in row.iter_mut().enumerate() {
                // block (b, a_r, ..., a_2) followed by a_1
                let mut head = Vec::with_capacity(r);
                head.push(b as u8);
                head.extend(rev_u[..r - 1].iter().copied());
                let from = self.state_of(&head);
                *slot = self.stationary[from] * self.transition(from, syms[0]) / denom;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        MarkovModel::new(self.alphabet.clone(), r, table)
    }

    /// Infinite symbol stream from the stationary chain; deterministic in `seed`.
    pub fn stream(&self, seed: u64) -> SymbolStream<'_> {
        SymbolStream::new(self, ChaCha8Rng::seed_from_u64(seed))
    }

    /// A trajectory of exactly `length` symbols, `length >= order`.
    pub fn simulate(&self, length: usize, seed: u64) -> Result<Trajectory> {
        if length < self.order {
            return Err(Error::Input(format!(
                "trajectory length {length} is shorter than the chain order {}",
                self.order
            )));
        }
        Ok(Trajectory {
            symbols: self.stream(seed).take(length).collect(),
            seed: Some(seed),
            model_id: Some(self.model_id()),
        })
    }
}

/// Lazily generated stationary trajectory. The first `order` symbols come
/// from one stationary draw; every later symbol consumes one uniform.
pub struct SymbolStream<'a> {
    model: &'a MarkovModel,
    rng: ChaCha8Rng,
    pending: Vec<u8>,
    state: usize,
}

impl<'a> SymbolStream<'a> {
    pub fn new(model: &'a MarkovModel, mut rng: ChaCha8Rng) -> Self {
        let state = model.sample_state(rng.random::<f64>());
        let mut pending = model.state_symbols(state);
        pending.reverse();
        SymbolStream {
            model,
            rng,
            pending,
            state,
        }
    }

    /// Continues a trajectory that has already emitted `prefix` (length at
    /// least the order): subsequent symbols follow the chain from its state.
    pub fn continuing(model: &'a MarkovModel, prefix: &[u8], rng: ChaCha8Rng) -> Self {
        SymbolStream {
            model,
            rng,
            pending: Vec::new(),
            state: model.state_of(prefix),
        }
    }
}

impl Iterator for SymbolStream<'_> {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        if let Some(s) = self.pending.pop() {
            return Some(s);
        }
        let b = self.model.sample_symbol(self.state, self.rng.random::<f64>());
        self.state = self.model.next_state(self.state, b);
        Some(b)
    }
}
