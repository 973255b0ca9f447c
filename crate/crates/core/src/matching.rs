//! Hitting, return and waiting times of cylinder words, word periods and
//! matching lengths.
//!
//! An occurrence at shift `k` means the word sits at positions
//! `k+1, ..., k+n` (1-indexed) of the searched sequence; only `k >= 1`
//! counts. Searches stop at a cap on the shift and report
//! [`Outcome::Censored`] when nothing was found up to it.

use alloc::vec;
use alloc::vec::Vec;

use crate::automaton::Automaton;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TimeKind {
    Hit,
    Return,
    Waiting,
}

impl TimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TimeKind::Hit => "hit",
            TimeKind::Return => "return",
            TimeKind::Waiting => "waiting",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Outcome {
    Found(u64),
    /// No occurrence at any shift up to the contained cap.
    Censored(u64),
}

impl Outcome {
    pub fn value(self) -> Option<u64> {
        match self {
            Outcome::Found(k) => Some(k),
            Outcome::Censored(_) => None,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, Outcome::Censored(_))
    }

    /// The found shift, or the cap for a censored search.
    pub fn bound(self) -> u64 {
        match self {
            Outcome::Found(k) | Outcome::Censored(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TimeRecord {
    pub kind: TimeKind,
    pub word_len: usize,
    pub outcome: Outcome,
    /// Shifts examined before the search for this word ended.
    pub scanned: u64,
}

/// Minimal self-overlap shift `k` of a word of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PeriodClass {
    pub n: usize,
    pub k: usize,
}

/// Matching lengths of the first `n` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MatchingLengths {
    pub plus: usize,
    pub minus: usize,
    /// Set when every prefix (resp. reversed prefix) reappears and the length
    /// is reported as `n + 1`. With shifts restricted to `k >= 1` inside
    /// `x_1^n` this cannot happen, but the flag is kept in the report.
    pub saturated: bool,
}

fn alphabet_bound(patterns: &[&[u8]]) -> usize {
    patterns
        .iter()
        .flat_map(|p| p.iter())
        .map(|&b| b as usize + 1)
        .max()
        .unwrap_or(1)
}

/// Single streaming pass looking for every pattern at shifts `1..=cap`.
///
/// `stream` yields the searched sequence from position 1; it may be lazy and
/// infinite. Each record is censored at `min(cap, shifts available)`.
/// Patterns must be non-empty and of equal length.
pub fn search_stream<I>(stream: I, patterns: &[&[u8]], cap: u64, kind: TimeKind) -> Vec<TimeRecord>
where
    I: IntoIterator<Item = u8>,
{
    let n = patterns[0].len();
    debug_assert!(n > 0 && patterns.iter().all(|p| p.len() == n));
    let m = alphabet_bound(patterns);
    let automaton = Automaton::new(patterns, m);
    let all = (1u8 << patterns.len()) - 1;
    let mut found: Vec<Option<u64>> = vec![None; patterns.len()];
    let mut pending = all;
    let mut node = 0usize;
    let mut examined = 0u64;
    for (pos, b) in stream.into_iter().enumerate() {
        node = if (b as usize) < m { automaton.step(node, b) } else { 0 };
        let end = pos as u64 + 1;
        if end <= n as u64 {
            continue;
        }
        let shift = end - n as u64;
        if shift > cap {
            break;
        }
        examined = shift;
        let hits = automaton.output(node) & pending;
        if hits != 0 {
            for (i, slot) in found.iter_mut().enumerate() {
                if hits & (1 << i) != 0 {
                    *slot = Some(shift);
                }
            }
            pending &= !hits;
            if pending == 0 {
                break;
            }
        }
    }
    found
        .into_iter()
        .map(|f| match f {
            Some(k) => TimeRecord {
                kind,
                word_len: n,
                outcome: Outcome::Found(k),
                scanned: k,
            },
            None => TimeRecord {
                kind,
                word_len: n,
                outcome: Outcome::Censored(examined),
                scanned: examined,
            },
        })
        .collect()
}

fn check_len(len: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Input("word length must be at least 1".into()));
    }
    if len < n + 1 {
        return Err(Error::Input(alloc::format!(
            "sequence of length {len} is too short for a word of length {n}"
        )));
    }
    Ok(())
}

/// First shift `k >= 1` with `trajectory[k+1..=k+n] == word`, searched up to
/// `min(cap, len - n)`.
pub fn hitting_time(trajectory: &[u8], word: &[u8], cap: u64) -> Result<TimeRecord> {
    check_len(trajectory.len(), word.len())?;
    Ok(search_stream(trajectory.iter().copied(), &[word], cap, TimeKind::Hit)[0])
}

/// `T^+_n`: hitting time of the trajectory's own first `n` symbols.
pub fn return_time(trajectory: &[u8], n: usize, cap: u64) -> Result<TimeRecord> {
    check_len(trajectory.len(), n)?;
    let word = &trajectory[..n];
    Ok(search_stream(trajectory.iter().copied(), &[word], cap, TimeKind::Return)[0])
}

/// `T^-_n`: hitting time of the reversed first `n` symbols.
pub fn reverse_hitting_time(trajectory: &[u8], n: usize, cap: u64) -> Result<TimeRecord> {
    check_len(trajectory.len(), n)?;
    let word: Vec<u8> = trajectory[..n].iter().rev().copied().collect();
    Ok(search_stream(trajectory.iter().copied(), &[&word], cap, TimeKind::Hit)[0])
}

/// `(T^+_n, T^-_n)` from one pass.
pub fn return_pair(trajectory: &[u8], n: usize, cap: u64) -> Result<(TimeRecord, TimeRecord)> {
    check_len(trajectory.len(), n)?;
    let word = &trajectory[..n];
    let rev: Vec<u8> = word.iter().rev().copied().collect();
    let r = search_stream(trajectory.iter().copied(), &[word, &rev], cap, TimeKind::Return);
    let minus = TimeRecord {
        kind: TimeKind::Hit,
        ..r[1]
    };
    Ok((r[0], minus))
}

/// `(W^+_n, W^-_n)`: hitting times in `target` of the first `n` symbols of
/// `word_source` and of their reversal, from one pass over `target`.
pub fn waiting_times(
    word_source: &[u8],
    target: &[u8],
    n: usize,
    cap: u64,
) -> Result<(TimeRecord, TimeRecord)> {
    if word_source.len() < n || n == 0 {
        return Err(Error::Input(alloc::format!(
            "word source of length {} is too short for n = {n}",
            word_source.len()
        )));
    }
    check_len(target.len(), n)?;
    Ok(waiting_times_stream(&word_source[..n], target.iter().copied(), cap))
}

/// Streaming form of [`waiting_times`] over a lazily generated target.
pub fn waiting_times_stream<I>(word: &[u8], target: I, cap: u64) -> (TimeRecord, TimeRecord)
where
    I: IntoIterator<Item = u8>,
{
    let rev: Vec<u8> = word.iter().rev().copied().collect();
    let r = search_stream(target, &[word, &rev], cap, TimeKind::Waiting);
    (r[0], r[1])
}

/// Prefix function: `pi[i]` is the length of the longest proper border of
/// `word[..=i]`.
fn prefix_function(word: &[u8]) -> Vec<usize> {
    let mut pi = vec![0usize; word.len()];
    for i in 1..word.len() {
        let mut k = pi[i - 1];
        while k > 0 && word[i] != word[k] {
            k = pi[k - 1];
        }
        if word[i] == word[k] {
            k += 1;
        }
        pi[i] = k;
    }
    pi
}

/// Z-array: `z[i]` is the longest common prefix of `s` and `s[i..]`; `z[0] = len`.
fn z_function(s: &[u8]) -> Vec<usize> {
    let n = s.len();
    let mut z = vec![0usize; n];
    if n == 0 {
        return z;
    }
    z[0] = n;
    let (mut l, mut r) = (0usize, 0usize);
    for i in 1..n {
        if i < r {
            z[i] = (r - i).min(z[i - l]);
        }
        while i + z[i] < n && s[z[i]] == s[i + z[i]] {
            z[i] += 1;
        }
        if i + z[i] > r {
            l = i;
            r = i + z[i];
        }
    }
    z
}

/// Smallest `k` in `1..=n` such that the word overlaps itself shifted by `k`.
pub fn word_period(word: &[u8]) -> Result<PeriodClass> {
    let n = word.len();
    if n == 0 {
        return Err(Error::Input("word length must be at least 1".into()));
    }
    let border = prefix_function(word)[n - 1];
    Ok(PeriodClass { n, k: n - border })
}

/// `(L^+_n, L^-_n)`: the shortest prefix `x_1^k`, resp. reversed prefix
/// `x_k^1`, with no occurrence at a shift `j >= 1` inside `x_1^n`.
pub fn matching_lengths(trajectory: &[u8], n: usize) -> Result<MatchingLengths> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    if trajectory.len() < n {
        return Err(Error::Input(alloc::format!(
            "trajectory of length {} is shorter than n = {n}",
            trajectory.len()
        )));
    }
    let x = &trajectory[..n];
    let z = z_function(x);
    let plus = z[1..].iter().copied().max().unwrap_or(0) + 1;

    // x_k^1 occurs at shift j >= 1 of x iff x_1^k occurs in rev(x) at a start
    // i = n - j - k, i.e. i <= n - 1 - k
    let mut joined: Vec<u8> = Vec::with_capacity(2 * n + 1);
    joined.extend_from_slice(x);
    joined.push(u8::MAX);
    joined.extend(x.iter().rev());
    let zj = z_function(&joined);
    let minus = (0..n)
        .map(|i| zj[n + 1 + i].min(n - 1 - i))
        .max()
        .unwrap_or(0)
        + 1;
    Ok(MatchingLengths {
        plus,
        minus,
        saturated: plus > n || minus > n,
    })
}
