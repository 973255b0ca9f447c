//! Exact spectral quantities of a model: mean entropy production, block
//! relative entropies, the scaled-cumulant generating function of the
//! entropy production and its Legendre transform, and the asymptotic
//! variance.
//!
//! The entropy production of a block splits into a bounded boundary term and
//! a sum of per-step weights `g(u, b) = log p(u -> b) - log p^R(u -> b)`.
//! The tilted matrix `M(p)[u, b] = p(u -> b) exp(p g(u, b))` has Perron root
//! `exp(E(p))`; `M(0)` and `M(-1)` are the forward and reversed transition
//! matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, next_state};
use crate::model::MarkovModel;

/// Relative tolerance of the Perron iteration.
pub const PERRON_TOL: f64 = 1e-13;
/// `|g|` at or below this is treated as exact reversibility.
pub const REVERSIBILITY_FLOOR: f64 = 1e-13;
/// Convexity margins above this count as strict.
pub const STRICT_CONVEXITY_MARGIN: f64 = 1e-12;
/// Search range of the Legendre transform.
pub const RATE_SEARCH: (f64, f64) = (-40.0, 40.0);
pub const RATE_TOL: f64 = 1e-10;
/// Step of the second difference for `E''(0)`.
pub const SIGMA2_STEP: f64 = 1e-4;
/// Largest number of blocks any enumeration will visit.
pub const ENUMERATION_LIMIT: usize = 2_000_000;

/// Per-step entropy weights and the tilted-matrix machinery of one model.
#[derive(Debug, Clone)]
pub struct Spectral {
    m: usize,
    states: usize,
    log_p: Vec<f64>,
    g: Vec<f64>,
    stationary: Vec<f64>,
    transitions: Vec<f64>,
    reversible: bool,
}

impl Spectral {
    pub fn new(model: &MarkovModel) -> Result<Self> {
        let reversed = model.reversed()?;
        let g: Vec<f64> = model
            .log_transitions()
            .iter()
            .zip(reversed.log_transitions())
            .map(|(a, b)| {
                let d = a - b;
                if d.abs() <= REVERSIBILITY_FLOOR {
                    0.0
                } else {
                    d
                }
            })
            .collect();
        let reversible = g.iter().all(|&x| x == 0.0);
        Ok(Spectral {
            m: model.alphabet_size(),
            states: model.num_states(),
            log_p: model.log_transitions().to_vec(),
            g,
            stationary: model.stationary().to_vec(),
            transitions: model.transitions().to_vec(),
            reversible,
        })
    }

    /// True when every per-step weight vanishes, i.e. `P = P^R`.
    pub fn is_reversible(&self) -> bool {
        self.reversible
    }

    /// `g(u, b)`, indexed `u * m + b`.
    pub fn weights(&self) -> &[f64] {
        &self.g
    }

    /// `sum_{u,b} pi(u) p(u -> b) g(u, b)`.
    pub fn mean_weight(&self) -> f64 {
        (0..self.states)
            .map(|u| {
                let row = u * self.m..u * self.m + self.m;
                self.stationary[u]
                    * self.transitions[row.clone()]
                        .iter()
                        .zip(&self.g[row])
                        .map(|(p, g)| p * g)
                        .sum::<f64>()
            })
            .sum()
    }

    fn tilted(&self, p: f64) -> (Vec<f64>, f64) {
        let logs: Vec<f64> = self.log_p.iter().zip(&self.g).map(|(lp, g)| lp + p * g).collect();
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (logs.iter().map(|l| libm::exp(l - shift)).collect(), shift)
    }

    /// `E(p)` together with `E'(p)`.
    pub fn scgf_with_derivative(&self, p: f64) -> Result<(f64, f64)> {
        if !p.is_finite() {
            return Err(Error::Validation(format!("tilt parameter must be finite, got {p}")));
        }
        if self.reversible {
            return Ok((0.0, 0.0));
        }
        let (weights, shift) = self.tilted(p);
        let perron = linalg::perron(self.m, &weights, self.states, PERRON_TOL)?;
        let mut mr = vec![0.0; self.states];
        linalg::apply_right(self.m, &weights, &perron.right, &mut mr);
        let derived: Vec<f64> = weights.iter().zip(&self.g).map(|(w, g)| w * g).collect();
        let mut dr = vec![0.0; self.states];
        linalg::apply_right(self.m, &derived, &perron.right, &mut dr);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let derivative = dot(&perron.left, &dr) / dot(&perron.left, &mr);
        Ok((shift + libm::log(perron.root), derivative))
    }

    pub fn scgf(&self, p: f64) -> Result<f64> {
        self.scgf_with_derivative(p).map(|(e, _)| e)
    }

    pub fn scgf_derivative(&self, p: f64) -> Result<f64> {
        self.scgf_with_derivative(p).map(|(_, d)| d)
    }

    /// `E''(0)` from centered differences of the exact derivative `E'` at
    /// steps `h` and `h/2`, combined by one Richardson step. Differencing `E'`
    /// rather than `E` divides the rounding error by `h` instead of `h^2`.
    pub fn second_derivative_at_zero(&self) -> Result<f64> {
        if self.reversible {
            return Ok(0.0);
        }
        let centered = |h: f64| -> Result<f64> {
            Ok((self.scgf_derivative(h)? - self.scgf_derivative(-h)?) / (2.0 * h))
        };
        let coarse = centered(SIGMA2_STEP)?;
        let fine = centered(SIGMA2_STEP / 2.0)?;
        Ok(((4.0 * fine - coarse) / 3.0).max(0.0))
    }

    /// Exact `sigma^2 = Var(g) + 2 sum_{l>=1} Cov(g_0, g_l)` from the
    /// fundamental matrix, and the lag sum `sum_{l>=1} Cov(g_0, g_l)` alone.
    pub fn green_kubo(&self) -> Result<(f64, f64)> {
        let (m, s) = (self.m, self.states);
        let mean = self.mean_weight();
        // h(v) = E[g | state v] - mean, f solves (I - P + 1 pi) f = h
        let mut f: Vec<f64> = (0..s)
            .map(|v| {
                (0..m).map(|b| self.transitions[v * m + b] * self.g[v * m + b]).sum::<f64>() - mean
            })
            .collect();
        let mut a = vec![0.0; s * s];
        for u in 0..s {
            a[u * s + u] += 1.0;
            for b in 0..m {
                a[u * s + next_state(u, b, m, s)] -= self.transitions[u * m + b];
            }
            for v in 0..s {
                a[u * s + v] += self.stationary[v];
            }
        }
        linalg::solve_dense(&mut a, &mut f)
            .ok_or_else(|| Error::Numeric("fundamental matrix is singular".into()))?;
        let mut variance = 0.0;
        let mut lags = 0.0;
        for u in 0..s {
            for b in 0..m {
                let mass = self.stationary[u] * self.transitions[u * m + b];
                let centered = self.g[u * m + b] - mean;
                variance += mass * centered * centered;
                lags += mass * centered * f[next_state(u, b, m, s)];
            }
        }
        Ok((variance + 2.0 * lags, lags))
    }
}

/// Mean entropy production `h(P | P^R)`, from block laws.
///
/// For order 1 this is `sum_ij pi_i p_ij log(p_ij / p_ji)`; for order `r` it
/// is `H_{r+1} - H_r` with `H_k = sum_w mu(w) log(mu(w) / mu(rev w))` over
/// stationary `k`-blocks.
pub fn mep_exact(model: &MarkovModel) -> f64 {
    let r = model.order();
    let m = model.alphabet_size();
    let block_term = |len: usize| -> f64 {
        let mut total = 0.0;
        let mut w = vec![0u8; len];
        for code in 0..m.pow(len as u32) {
            let mut c = code;
            for s in w.iter_mut().rev() {
                *s = (c % m) as u8;
                c /= m;
            }
            let lp = block_log_prob(model, &w);
            let rev: Vec<u8> = w.iter().rev().copied().collect();
            total += libm::exp(lp) * (lp - block_log_prob(model, &rev));
        }
        total
    };
    if r == 1 {
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let pij = model.transition(i, j as u8);
                let pji = model.transition(j, i as u8);
                total += model.stationary()[i] * pij * libm::log(pij / pji);
            }
        }
        return total.max(0.0);
    }
    (block_term(r + 1) - block_term(r)).max(0.0)
}

fn block_log_prob(model: &MarkovModel, w: &[u8]) -> f64 {
    let state = model.state_of(&w[..model.order()]);
    let mut lp = model.log_stationary()[state];
    if w.len() > model.order() {
        lp += model.log_transition(state, w[model.order()]);
    }
    lp
}

/// `H_n(P | P^R) = sum_{|w| = n} P(w) log(P(w) / P(rev w))` by enumeration of
/// all `m^n` blocks. Requires `order <= n` and `m^n <= 2 * 10^6`.
pub fn hn_relative_entropy(model: &MarkovModel, n: usize) -> Result<f64> {
    let m = model.alphabet_size();
    if n < model.order() {
        return Err(Error::Unsupported(format!(
            "block length {n} is shorter than the order {}",
            model.order()
        )));
    }
    let count = (m as f64).powi(n as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(Error::Unsupported(format!("{m}^{n} blocks exceed the enumeration limit")));
    }
    let mut total = 0.0;
    let mut w = vec![0u8; n];
    let mut rev = vec![0u8; n];
    for code in 0..count as usize {
        let mut c = code;
        for s in w.iter_mut().rev() {
            *s = (c % m) as u8;
            c /= m;
        }
        for (dst, src) in rev.iter_mut().zip(w.iter().rev()) {
            *dst = *src;
        }
        let lp = model.cylinder_log_prob(&w)?;
        total += libm::exp(lp) * (lp - model.cylinder_log_prob(&rev)?);
    }
    Ok(total)
}

/// `E(p)`, the log Perron root of the tilted matrix.
pub fn scgf(model: &MarkovModel, p: f64) -> Result<f64> {
    Spectral::new(model)?.scgf(p)
}

/// `E'(p)` by first-order perturbation of the Perron root.
pub fn scgf_derivative(model: &MarkovModel, p: f64) -> Result<f64> {
    Spectral::new(model)?.scgf_derivative(p)
}

/// `(c_-, c_+) = (E'(-1), E'(1))`.
pub fn scgf_endpoints(model: &MarkovModel) -> Result<(f64, f64)> {
    let s = Spectral::new(model)?;
    Ok((s.scgf_derivative(-1.0)?, s.scgf_derivative(1.0)?))
}

/// Limit of the waiting-time SCGF: `E(p)` on `(-1, 1)`, `+inf` elsewhere
/// (the endpoints included).
pub fn waiting_scgf(model: &MarkovModel, p: f64) -> Result<f64> {
    waiting_from(&Spectral::new(model)?, p)
}

fn waiting_from(s: &Spectral, p: f64) -> Result<f64> {
    if p.abs() < 1.0 {
        s.scgf(p)
    } else {
        Ok(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct RatePoint {
    pub q: f64,
    /// `sup_p (p q - E(p))`; `+inf` when the supremum sits at the search edge.
    pub value: f64,
    pub argmax: f64,
    pub boundary: bool,
}

/// Legendre transform at `q` by golden-section search on [`RATE_SEARCH`].
pub fn rate_function(model: &MarkovModel, q: f64) -> Result<RatePoint> {
    rate_from(&Spectral::new(model)?, q)
}

fn rate_from(s: &Spectral, q: f64) -> Result<RatePoint> {
    let objective = |p: f64| -> Result<f64> { Ok(p * q - s.scgf(p)?) };
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = RATE_SEARCH;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > RATE_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let argmax = 0.5 * (a + b);
    let value = objective(argmax)?;
    let at_edge = argmax - RATE_SEARCH.0 < 1e-6 || RATE_SEARCH.1 - argmax < 1e-6;
    // a flat objective (E = 0, q = 0) drifts to an edge without growing
    let boundary = at_edge && value - objective(0.0)? > 1e-12;
    Ok(RatePoint {
        q,
        value: if boundary { f64::INFINITY } else { value.max(0.0) },
        argmax,
        boundary,
    })
}

/// `(E'(-40), E'(40))`, the derivative range seen by the Legendre search.
pub fn rate_interval(model: &MarkovModel) -> Result<(f64, f64)> {
    let s = Spectral::new(model)?;
    Ok((s.scgf_derivative(RATE_SEARCH.0)?, s.scgf_derivative(RATE_SEARCH.1)?))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ScgfCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
    pub endpoints: (f64, f64),
    /// Smallest `E(p1) + E(p3) - 2 E(p2)` over consecutive grid triples
    /// (the grid is assumed evenly spaced).
    pub convexity_margin: f64,
}

impl ScgfCurve {
    pub fn is_convex(&self) -> bool {
        self.convexity_margin >= -1e-9
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.convexity_margin > STRICT_CONVEXITY_MARGIN
    }
}

/// Evenly spaced grid of `points` values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

pub fn scgf_curve(model: &MarkovModel, grid: &[f64]) -> Result<ScgfCurve> {
    let s = Spectral::new(model)?;
    let (values, derivative): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .map(|&p| s.scgf_with_derivative(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let convexity_margin = values
        .windows(3)
        .map(|w| w[0] + w[2] - 2.0 * w[1])
        .fold(f64::INFINITY, f64::min);
    Ok(ScgfCurve {
        grid: grid.to_vec(),
        values,
        derivative,
        endpoints: (s.scgf_derivative(-1.0)?, s.scgf_derivative(1.0)?),
        convexity_margin,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct RateCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: Vec<f64>,
    pub boundary: Vec<bool>,
}

pub fn rate_curve(model: &MarkovModel, grid: &[f64]) -> Result<RateCurve> {
    let s = Spectral::new(model)?;
    let points = grid.iter().map(|&q| rate_from(&s, q)).collect::<Result<Vec<_>>>()?;
    Ok(RateCurve {
        grid: grid.to_vec(),
        values: points.iter().map(|p| p.value).collect(),
        argmax: points.iter().map(|p| p.argmax).collect(),
        boundary: points.iter().map(|p| p.boundary).collect(),
    })
}

/// `sigma^2 = E''(0)`.
pub fn sigma2_exact(model: &MarkovModel) -> Result<f64> {
    Spectral::new(model)?.second_derivative_at_zero()
}

/// `Var(sum_{j<k} g_j)` for `k = 1..` as far as the enumeration limit allows,
/// by visiting every block of length `k + order`.
pub fn block_variances(model: &MarkovModel, max_steps: usize) -> Result<Vec<f64>> {
    let s = Spectral::new(model)?;
    let m = model.alphabet_size();
    let r = model.order();
    let mut out = Vec::new();
    for k in 1..=max_steps {
        let len = k + r;
        if (m as f64).powi(len as i32) > ENUMERATION_LIMIT as f64 {
            break;
        }
        let (mut s1, mut s2) = (0.0, 0.0);
        enumerate_blocks(model, &s, len, &mut |prob, sum| {
            s1 += prob * sum;
            s2 += prob * sum * sum;
        });
        out.push(s2 - s1 * s1);
    }
    if out.len() < 3 {
        return Err(Error::Unsupported("too few enumerable block lengths".into()));
    }
    Ok(out)
}

/// Depth-first walk over every block of length `len`, reporting
/// `(P(block), sum of g along it)`.
fn enumerate_blocks(model: &MarkovModel, s: &Spectral, len: usize, visit: &mut dyn FnMut(f64, f64)) {
    let m = model.alphabet_size();
    let r = model.order();
    fn walk(
        model: &MarkovModel,
        g: &[f64],
        m: usize,
        state: usize,
        prob: f64,
        sum: f64,
        left: usize,
        visit: &mut dyn FnMut(f64, f64),
    ) {
        if left == 0 {
            visit(prob, sum);
            return;
        }
        for b in 0..m as u8 {
            walk(
                model,
                g,
                m,
                model.next_state(state, b),
                prob * model.transition(state, b),
                sum + g[state * m + b as usize],
                left - 1,
                visit,
            );
        }
    }
    for u in 0..model.num_states() {
        walk(model, s.weights(), m, u, model.stationary()[u], 0.0, len - r, visit);
    }
}

/// Limit of `Var_{k+1} - Var_k`, Aitken-accelerated over the last three
/// increments.
pub fn sigma2_enumeration(model: &MarkovModel) -> Result<f64> {
    let v = block_variances(model, 64)?;
    let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let k = d.len();
    if k < 3 {
        return Ok(d[k - 1].max(0.0));
    }
    let (a, b, c) = (d[k - 3], d[k - 2], d[k - 1]);
    let denom = c - 2.0 * b + a;
    let accelerated = if denom.abs() > 1e-14 * (a.abs() + b.abs() + c.abs()) {
        c - (c - b) * (c - b) / denom
    } else {
        c
    };
    // Aitken is only trusted while it moves the last increment a little
    let value = if (accelerated - c).abs() <= (c - b).abs() {
        accelerated
    } else {
        c
    };
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Sigma2Report {
    /// `E''(0)`, the reported value.
    pub second_derivative: f64,
    /// Enumeration limit of `Var / n`.
    pub enumeration: f64,
    /// Exact `Var(g) + 2 sum_{l>=1} Cov(g_0, g_l)`.
    pub green_kubo: f64,
    /// `sum_{l>=1} Cov(g_0, g_l)` alone, the series without the lag-0 term.
    pub lag_series: f64,
    pub relative_gap: f64,
    /// Set when the lag-only series differs from `E''(0)` by more than `1e-6`.
    pub lag_series_discrepancy: bool,
}

pub fn sigma2_report(model: &MarkovModel) -> Result<Sigma2Report> {
    let s = Spectral::new(model)?;
    let second_derivative = s.second_derivative_at_zero()?;
    let enumeration = sigma2_enumeration(model)?;
    let (green_kubo, lag_series) = s.green_kubo()?;
    let scale = second_derivative.abs().max(enumeration.abs());
    let relative_gap = if scale == 0.0 {
        0.0
    } else {
        (second_derivative - enumeration).abs() / scale
    };
    Ok(Sigma2Report {
        second_derivative,
        enumeration,
        green_kubo,
        lag_series,
        relative_gap,
        lag_series_discrepancy: (lag_series - second_derivative).abs() > 1e-6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SymmetryRow {
    pub p: f64,
    pub w: f64,
    pub w_mirror: f64,
    pub w_reversed: f64,
    pub w_reversed_mirror: f64,
    /// `max - min` of the four values, NaN on endpoint rows.
    pub residual: f64,
    /// `p` or `-1 - p` is an endpoint, where the waiting SCGF is `+inf`.
    pub endpoint: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ScgfSymmetryRow {
    pub p: f64,
    pub e: f64,
    pub e_mirror: f64,
    pub e_reversed: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SymmetryReport {
    pub waiting: Vec<SymmetryRow>,
    pub scgf: Vec<ScgfSymmetryRow>,
    /// Largest `|E(p) - E(-1-p)|` over the SCGF rows.
    pub mirror_residual: f64,
    /// Largest `|E(p) - E^R(p)|` over the SCGF rows.
    pub reversal_residual: f64,
    /// Largest residual over non-endpoint waiting rows.
    pub waiting_residual: f64,
}

impl SymmetryReport {
    pub fn max_residual(&self) -> f64 {
        self.mirror_residual.max(self.reversal_residual).max(self.waiting_residual)
    }
}

/// Checks `W(-1-p) = W^R(p) = W(p)` on `waiting_grid` (points of `(-1, 0]`)
/// and `E(p) = E(-1-p) = E^R(p)` on `scgf_grid`.
pub fn symmetry_report(model: &MarkovModel, waiting_grid: &[f64], scgf_grid: &[f64]) -> Result<SymmetryReport> {
    let fwd = Spectral::new(model)?;
    let rev = Spectral::new(&model.reversed()?)?;
    let mut waiting = Vec::with_capacity(waiting_grid.len());
    let mut waiting_residual: f64 = 0.0;
    for &p in waiting_grid {
        let vals = [
            waiting_from(&fwd, p)?,
            waiting_from(&fwd, -1.0 - p)?,
            waiting_from(&rev, p)?,
            waiting_from(&rev, -1.0 - p)?,
        ];
        let endpoint = vals.iter().any(|v| v.is_infinite());
        let residual = if endpoint {
            f64::NAN
        } else {
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        };
        if !endpoint {
            waiting_residual = waiting_residual.max(residual);
        }
        waiting.push(SymmetryRow {
            p,
            w: vals[0],
            w_mirror: vals[1],
            w_reversed: vals[2],
            w_reversed_mirror: vals[3],
            residual,
            endpoint,
        });
    }
    let mut scgf_rows = Vec::with_capacity(scgf_grid.len());
    let (mut mirror_residual, mut reversal_residual) = (0.0f64, 0.0f64);
    for &p in scgf_grid {
        let row = ScgfSymmetryRow {
            p,
            e: fwd.scgf(p)?,
            e_mirror: fwd.scgf(-1.0 - p)?,
            e_reversed: rev.scgf(p)?,
        };
        mirror_residual = mirror_residual.max((row.e - row.e_mirror).abs());
        reversal_residual = reversal_residual.max((row.e - row.e_reversed).abs());
        scgf_rows.push(row);
    }
    Ok(SymmetryReport {
        waiting,
        scgf: scgf_rows,
        mirror_residual,
        reversal_residual,
        waiting_residual,
    })
}
