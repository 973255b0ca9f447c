//! Exact sampling of hitting-time pairs for long words.
//!
//! A word of length `n` is met after roughly `1 / P([a])` steps, far beyond
//! any scan once `n` is in the hundreds. The sampler instead runs the joint
//! chain of (pattern automaton node, last `order` symbols) as an absorbing
//! chain. While the automaton is deep inside a partial match the symbols are
//! drawn one by one; from a shallow state the absorption law is computed by
//! forward recursion until the conditioned state law has converged to its
//! quasi-stationary limit, after which the remaining time is geometric.
//!
//! Masses are stored scaled by the cylinder probability of each state's
//! string, so states of every depth stay of comparable size, and times are
//! returned as natural logarithms since they may exceed any integer type.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::Rng;

use crate::automaton::Automaton;
use crate::error::{Error, Result};
use crate::linalg::log_add_exp;
use crate::model::MarkovModel;

/// `L1` change of the scaled state law at which the recursion stops.
pub const CONVERGENCE_TOL: f64 = 1e-12;

/// Natural logs of the hitting times of a word (`plus`) and of its reversal
/// (`minus`).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LogTimePair {
    pub ln_plus: f64,
    pub ln_minus: f64,
}

impl LogTimePair {
    /// `log(T^- / T^+)`.
    pub fn log_ratio(&self) -> f64 {
        self.ln_minus - self.ln_plus
    }
}

/// Absorption law of one phase from one shallow start state.
#[derive(Debug, Clone)]
struct Profile {
    /// `ln P(absorbed by step j + 1)`.
    ln_cum: Vec<f64>,
    /// `ln P(absorbed at step j + 1 into slot k)`.
    ln_step: Vec<[f64; 2]>,
    ln_eps: f64,
    /// Probability that a tail absorption lands in slot 0.
    tail_first: f64,
}

/// Draws `(T_a, T_{rev a})` for one fixed word `a`.
pub struct PairSampler<'a> {
    model: &'a MarkovModel,
    automaton: Automaton,
    n: usize,
    word: Vec<u8>,
    base: Vec<usize>,
    state_node: Vec<usize>,
    ln_p_state: Vec<f64>,
    p_state: Vec<f64>,
    trans: Vec<u32>,
    weight: Vec<f64>,
    max_depth: usize,
    cache: BTreeMap<(usize, u8), Profile>,
}

impl<'a> PairSampler<'a> {
    /// `word` must have length at least the chain order.
    pub fn new(model: &'a MarkovModel, word: &[u8]) -> Result<Self> {
        let n = word.len();
        let (m, r) = (model.alphabet_size(), model.order());
        if n < r {
            return Err(Error::Unsupported(format!(
                "word length {n} is shorter than the chain order {r}"
            )));
        }
        if word.iter().any(|&b| b as usize >= m) {
            return Err(Error::Validation("word symbol outside the alphabet".into()));
        }
        let rev: Vec<u8> = word.iter().rev().copied().collect();
        let automaton = Automaton::new(&[word, &rev], m);
        let nodes = automaton.len();
        let states_r = model.num_states();

        // last r symbols of each node string and its cylinder log-probability
        let mut tail = vec![0usize; nodes];
        let mut ln_p_node = vec![0.0; nodes];
        let mut order: Vec<usize> = (1..nodes).collect();
        order.sort_by_key(|&v| automaton.depth(v));
        for &v in &order {
            let parent = automaton.parent(v);
            let sym = automaton.symbol(v);
            tail[v] = (tail[parent] * m + sym as usize) % states_r;
            let d = automaton.depth(v);
            if d == r {
                ln_p_node[v] = model.log_stationary()[tail[v]];
            } else if d > r {
                ln_p_node[v] = ln_p_node[parent] + model.log_transition(tail[parent], sym);
            }
        }

        let mut base = vec![0usize; nodes];
        let mut state_node = Vec::new();
        let mut ln_p_state = Vec::new();
        let mut state_ctx = Vec::new();
        for v in 0..nodes {
            base[v] = state_node.len();
            let d = automaton.depth(v);
            if d >= r {
                state_node.push(v);
                state_ctx.push(tail[v]);
                ln_p_state.push(ln_p_node[v]);
            } else {
                let low = m.pow(d as u32);
                for hi in 0..m.pow((r - d) as u32) {
                    let ctx = hi * low + tail[v];
                    state_node.push(v);
                    state_ctx.push(ctx);
                    ln_p_state.push(model.log_stationary()[ctx]);
                }
            }
        }
        let total = state_node.len();
        let mut sampler = PairSampler {
            model,
            automaton,
            n,
            word: word.to_vec(),
            base,
            state_node,
            p_state: ln_p_state.iter().map(|&l| libm::exp(l)).collect(),
            ln_p_state,
            trans: vec![0; total * m],
            weight: vec![0.0; total * m],
            max_depth: n,
            cache: BTreeMap::new(),
        };
        for s in 0..total {
            let (v, ctx) = (sampler.state_node[s], state_ctx[s]);
            for b in 0..m as u8 {
                let v2 = sampler.automaton.step(v, b);
                let ctx2 = model.next_state(ctx, b);
                let s2 = sampler.state_index(v2, ctx2);
                sampler.trans[s * m + b as usize] = s2 as u32;
                sampler.weight[s * m + b as usize] = libm::exp(
                    sampler.ln_p_state[s] + model.log_transition(ctx, b) - sampler.ln_p_state[s2],
                );
            }
        }
        Ok(sampler)
    }

    pub fn word(&self) -> &[u8] {
        &self.word
    }

    /// Number of (node, context) states of the absorbing chain.
    pub fn num_states(&self) -> usize {
        self.state_node.len()
    }

    fn state_index(&self, node: usize, ctx: usize) -> usize {
        let d = self.automaton.depth(node);
        if d >= self.model.order() {
            self.base[node]
        } else {
            self.base[node] + ctx / self.model.alphabet_size().pow(d as u32)
        }
    }

    /// Absorbing slots: slot `k` is the end node of pattern `k`, carrying the
    /// pattern bits it completes under `mask`.
    fn slots(&self, mask: u8) -> [(usize, u8); 2] {
        let mut out = [(usize::MAX, 0u8); 2];
        for (k, slot) in out.iter_mut().enumerate() {
            let node = self.automaton.pattern_node(k);
            let bits = self.automaton.output(node) & mask;
            if bits != 0 && (k == 0 || node != self.automaton.pattern_node(0)) {
                *slot = (node, bits);
            }
        }
        out
    }

    fn profile(&mut self, start: usize, mask: u8) -> Result<&Profile> {
        if !self.cache.contains_key(&(start, mask)) {
            let p = self.compute_profile(start, mask)?;
            self.cache.insert((start, mask), p);
        }
        Ok(&self.cache[&(start, mask)])
    }

    fn compute_profile(&self, start: usize, mask: u8) -> Result<Profile> {
        let m = self.model.alphabet_size();
        let total = self.num_states();
        let slots = self.slots(mask);
        let mut slot_of = vec![u8::MAX; total];
        let mut ln_p_slot = [f64::NEG_INFINITY; 2];
        for (k, &(node, bits)) in slots.iter().enumerate() {
            if bits != 0 {
                let s = self.base[node];
                slot_of[s] = k as u8;
                ln_p_slot[k] = self.ln_p_state[s];
            }
        }

        let mut y = vec![0.0; total];
        let mut next = vec![0.0; total];
        y[start] = 1.0 / self.p_state[start];
        // ln of the surviving mass; sum_s y[s] P(s) = 1 throughout
        let mut ln_survival = 0.0;
        let mut ln_total = f64::NEG_INFINITY;
        let mut ln_cum = Vec::new();
        let mut ln_step = Vec::new();
        let max_steps = 64 * (self.max_depth + self.model.order()) + 100_000;
        for t in 1..=max_steps {
            next.iter_mut().for_each(|x| *x = 0.0);
            let mut acc = [0.0f64; 2];
            for (s, &ys) in y.iter().enumerate() {
                if ys == 0.0 {
                    continue;
                }
                let row = s * m;
                for b in 0..m {
                    let s2 = self.trans[row + b] as usize;
                    let flow = ys * self.weight[row + b];
                    match slot_of[s2] {
                        u8::MAX => next[s2] += flow,
                        k => acc[k as usize] += flow,
                    }
                }
            }
            let ln_abs = [
                ln_p_slot[0] + libm::log(acc[0]),
                ln_p_slot[1] + libm::log(acc[1]),
            ];
            let ln_eps = log_add_exp(ln_abs[0], ln_abs[1]);
            let step = [ln_survival + ln_abs[0], ln_survival + ln_abs[1]];
            ln_total = log_add_exp(ln_total, ln_survival + ln_eps);
            ln_cum.push(ln_total);
            ln_step.push(step);

            let surviving: f64 = next.iter().zip(&self.p_state).map(|(a, b)| a * b).sum();
            if !(surviving > 0.0) {
                return Err(Error::Numeric("absorbing recursion lost all mass".into()));
            }
            let mut change = 0.0;
            let mut size = 0.0;
            for (a, b) in next.iter_mut().zip(&y) {
                *a /= surviving;
                change += (*a - b).abs();
                size += a.abs();
            }
            ln_survival += libm::log(surviving);
            core::mem::swap(&mut y, &mut next);
            if t > self.max_depth && change <= CONVERGENCE_TOL * size && ln_eps.is_finite() {
                let tail_first = libm::exp(ln_abs[0] - ln_eps);
                return Ok(Profile {
                    ln_cum,
                    ln_step,
                    ln_eps,
                    tail_first: if tail_first.is_nan() { 0.0 } else { tail_first },
                });
            }
        }
        Err(Error::Numeric("absorption law did not reach its quasi-stationary limit".into()))
    }

    /// Runs one phase from `(node, ctx)` until a pattern in `mask` completes.
    /// Returns the log of the number of steps and the completed bits.
    fn phase<R: Rng + ?Sized>(&mut self, mut node: usize, mut ctx: usize, mask: u8, rng: &mut R) -> Result<(f64, u8)> {
        let r = self.model.order();
        let mut steps = 0u64;
        while self.automaton.depth(node) > r {
            let b = self.model.sample_symbol(ctx, rng.random::<f64>());
            node = self.automaton.step(node, b);
            ctx = self.model.next_state(ctx, b);
            steps += 1;
            let bits = self.automaton.output(node) & mask;
            if bits != 0 {
                return Ok((libm::log(steps as f64), bits));
            }
        }
        let start = self.state_index(node, ctx);
        let slots = self.slots(mask);
        let profile = self.profile(start, mask)?;
        let u: f64 = rng.sample(Open01);
        let ln_early = *profile.ln_cum.last().unwrap_or(&f64::NEG_INFINITY);
        let (ln_duration, slot) = if libm::log(u) < ln_early {
            let v: f64 = rng.sample(Open01);
            let target = libm::log(v) + ln_early;
            let j = profile.ln_cum.partition_point(|&c| c < target).min(profile.ln_cum.len() - 1);
            let [a, b] = profile.ln_step[j];
            let first = libm::exp(a - log_add_exp(a, b));
            let w: f64 = rng.sample(Open01);
            (libm::log(steps as f64 + j as f64 + 1.0), if w < first { 0 } else { 1 })
        } else {
            let e = -libm::log(rng.sample::<f64, _>(Open01));
            let ln_g = if profile.ln_eps < -35.0 {
                libm::log(e) - profile.ln_eps
            } else {
                let eps = libm::exp(profile.ln_eps);
                let g = if eps >= 1.0 { 1.0 } else { libm::ceil(e / -libm::log1p(-eps)).max(1.0) };
                libm::log(g)
            };
            let before = steps as f64 + profile.ln_cum.len() as f64;
            let w: f64 = rng.sample(Open01);
            (log_add_exp(libm::log(before), ln_g), if w < profile.tail_first { 0 } else { 1 })
        };
        Ok((ln_duration, slots[slot].1))
    }

    fn pair_from<R: Rng + ?Sized>(&mut self, node: usize, ctx: usize, rng: &mut R) -> Result<LogTimePair> {
        let (ln_first, bits) = self.phase(node, ctx, 0b11, rng)?;
        if bits == 0b11 {
            return Ok(LogTimePair {
                ln_plus: ln_first,
                ln_minus: ln_first,
            });
        }
        let hit = if bits & 1 != 0 { 0 } else { 1 };
        let other_mask = if hit == 0 { 0b10 } else { 0b01 };
        let end = self.automaton.pattern_node(hit);
        let end_ctx = if hit == 0 {
            self.model.state_of(&self.word)
        } else {
            let rev: Vec<u8> = self.word.iter().rev().copied().collect();
            self.model.state_of(&rev)
        };
        let (ln_more, _) = self.phase(end, end_ctx, other_mask, rng)?;
        let ln_other = log_add_exp(ln_first, ln_more);
        Ok(if hit == 0 {
            LogTimePair {
                ln_plus: ln_first,
                ln_minus: ln_other,
            }
        } else {
            LogTimePair {
                ln_plus: ln_other,
                ln_minus: ln_first,
            }
        })
    }

    /// Waiting times `(W^+, W^-)` of the word in a fresh stationary
    /// trajectory, counting only shifts `k >= 1`.
    pub fn sample_waiting<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LogTimePair> {
        let head = draw_word(self.model, self.n, rng);
        let node = self.automaton.run(&head);
        let ctx = self.model.state_of(&head);
        self.pair_from(node, ctx, rng)
    }

    /// Return-time pair `(T^+, T^-)` of a trajectory that starts with the word.
    pub fn sample_return<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LogTimePair> {
        let node = self.automaton.pattern_node(0);
        let ctx = self.model.state_of(&self.word);
        self.pair_from(node, ctx, rng)
    }
}

/// First `n >= order` symbols of a stationary trajectory.
pub fn draw_word<R: Rng + ?Sized>(model: &MarkovModel, n: usize, rng: &mut R) -> Vec<u8> {
    let r = model.order();
    let mut state = model.sample_state(rng.random::<f64>());
    let mut word = model.state_symbols(state);
    while word.len() < n {
        let b = model.sample_symbol(state, rng.random::<f64>());
        word.push(b);
        state = model.next_state(state, b);
    }
    word.truncate(n.max(r));
    word
}

/// `S^W_n` sample: a word from one stationary trajectory, its waiting times in
/// an independent one.
pub fn sample_waiting_pair<R: Rng + ?Sized>(model: &MarkovModel, n: usize, rng: &mut R) -> Result<(Vec<u8>, LogTimePair)> {
    let word = draw_word(model, n, rng);
    let pair = PairSampler::new(model, &word)?.sample_waiting(rng)?;
    Ok((word, pair))
}

/// `S^H_n` sample: a stationary trajectory's first `n` symbols and its
/// return-time pair.
pub fn sample_return_pair<R: Rng + ?Sized>(model: &MarkovModel, n: usize, rng: &mut R) -> Result<(Vec<u8>, LogTimePair)> {
    let word = draw_word(model, n, rng);
    let pair = PairSampler::new(model, &word)?.sample_return(rng)?;
    Ok((word, pair))
}
