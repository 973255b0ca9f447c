//! Small numeric kernels over the de Bruijn shift structure of an order-`r`
//! chain: state `u` moves to `(u * m + b) % states` on symbol `b`, so every
//! matrix here has exactly `m` entries per row and is stored as a
//! `states * m` weight table.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[inline]
pub(crate) fn next_state(state: usize, symbol: usize, m: usize, states: usize) -> usize {
    (state * m + symbol) % states
}

/// `out[u] = sum_b w[u, b] * v[next(u, b)]`
pub(crate) fn apply_right(m: usize, weights: &[f64], v: &[f64], out: &mut [f64]) {
    let states = v.len();
    for (u, o) in out.iter_mut().enumerate() {
        let base = (u * m) % states;
        let row = &weights[u * m..u * m + m];
        *o = row.iter().enumerate().map(|(b, w)| w * v[base + b]).sum();
    }
}

/// `out[next(u, b)] += v[u] * w[u, b]`
pub(crate) fn apply_left(m: usize, weights: &[f64], v: &[f64], out: &mut [f64]) {
    let states = v.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (u, &vu) in v.iter().enumerate() {
        let base = (u * m) % states;
        for b in 0..m {
            out[base + b] += vu * weights[u * m + b];
        }
    }
}

pub(crate) struct Perron {
    pub root: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Iterates `v <- (M + cI) v` with `c` the current Collatz-Wielandt lower
/// bound, until the bracket `[min_i (Mv)_i / v_i, max_i ...]` has relative
/// width below `tol`. The diagonal shift keeps the iteration converging when
/// `M` is close to a permutation (eigenvalues of equal modulus on a circle).
fn power_side(
    m: usize,
    weights: &[f64],
    states: usize,
    tol: f64,
    max_iter: usize,
    left: bool,
) -> Result<Vec<f64>> {
    let mut v = vec![1.0 / states as f64; states];
    let mut w = vec![0.0; states];
    let mut shift = 0.0;
    for _ in 0..max_iter {
        if left {
            apply_left(m, weights, &v, &mut w);
        } else {
            apply_right(m, weights, &v, &mut w);
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (a, b) in w.iter().zip(&v) {
            let ratio = a / b;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if !(hi.is_finite() && lo > 0.0) {
            return Err(Error::Numeric("Perron iteration left the positive cone".into()));
        }
        if hi - lo <= tol * hi {
            core::mem::swap(&mut v, &mut w);
            normalize(&mut v);
            return Ok(v);
        }
        for (a, b) in w.iter_mut().zip(&v) {
            *a += shift * b;
        }
        shift = lo;
        core::mem::swap(&mut v, &mut w);
        normalize(&mut v);
    }
    Err(Error::Numeric("Perron iteration did not converge".into()))
}

/// Perron root and both Perron vectors of a nonnegative primitive shift matrix.
/// The root is the Rayleigh quotient `l.M.r / l.r`, which is second-order
/// accurate in the eigenvector error.
pub(crate) fn perron(m: usize, weights: &[f64], states: usize, tol: f64) -> Result<Perron> {
    const MAX_ITER: usize = 1_000_000;
    let right = power_side(m, weights, states, tol, MAX_ITER, false)?;
    let left = power_side(m, weights, states, tol, MAX_ITER, true)?;
    let mut mr = vec![0.0; states];
    apply_right(m, weights, &right, &mut mr);
    let num: f64 = left.iter().zip(&mr).map(|(a, b)| a * b).sum();
    let den: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum();
    Ok(Perron {
        root: num / den,
        left,
        right,
    })
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `None` for a numerically singular system.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64]) -> Option<()> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(core::cmp::Ordering::Equal)
        })?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * b[k]).sum();
        b[row] = (b[row] - s) / a[row * n + row];
    }
    Some(())
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add_exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_small_system() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        solve_dense(&mut a, &mut b).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-15);
        assert!((b[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn singular_system_is_rejected() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_dense(&mut a, &mut b).is_none());
    }

    #[test]
    fn perron_of_stochastic_matrix_is_one() {
        let w = [0.2, 0.8, 0.6, 0.4];
        let p = perron(2, &w, 2, 1e-14).unwrap();
        assert!((p.root - 1.0).abs() < 1e-15);
        // left vector is the stationary law (0.6/1.4, 0.8/1.4)
        assert!((p.left[0] - 0.6 / 1.4).abs() < 1e-13);
    }

    #[test]
    fn log_sum_exp_handles_empty_and_infinite() {
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
        assert!((log_sum_exp([0.0, 0.0]) - libm::log(2.0)).abs() < 1e-15);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, 1.5]), 1.5);
    }
}
