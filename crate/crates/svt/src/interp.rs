//! Corner-aligned linear interpolation.
//!
//! One weight scheme serves every resampling need in the crate: frame
//! resizing, positional-table resizing (1-D temporal, 2-D spatial), and the
//! gradient scatter back onto learned tables. Output index `i` of a resize
//! from `n_in` to `n_out` samples reads source position
//! `i * (n_in - 1) / (n_out - 1)`, so the first and last samples always map
//! to the first and last sources, and a same-size resize is the identity
//! bit for bit.

use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};

/// One output sample = `src[lo] * (1 - w) + src[hi] * w`, with `w` in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

/// Corner-aligned taps for resampling a length-`n_in` axis to `n_out`.
///
/// Both lengths must be >= 1. `n_in == 1` broadcasts the single source;
/// `n_out == 1` reads source position 0; `n_in == n_out` yields exact
/// identity taps.
pub fn linear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    assert!(n_in >= 1 && n_out >= 1, "axis lengths must be positive");
    if n_in == n_out {
        return (0..n_out).map(|i| Tap { lo: i, hi: i, w: 0.0 }).collect();
    }
    if n_in == 1 {
        return vec![Tap { lo: 0, hi: 0, w: 0.0 }; n_out];
    }
    let scale = (n_in - 1) as f64 / (n_out.max(2) - 1) as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let w = pos - lo as f64;
            Tap { lo, hi, w }
        })
        .collect()
}

/// Resample the rows of a matrix: `(n_in, d)` -> `(taps.len(), d)`.
pub fn interp_rows<T: Scalar>(src: ArrayView2<T>, taps: &[Tap]) -> Array2<T> {
    let d = src.ncols();
    let mut out = Array2::from_elem((taps.len(), d), T::from_f64(0.0));
    for (mut row, tap) in out.rows_mut().into_iter().zip(taps) {
        let lo = src.row(tap.lo);
        let hi = src.row(tap.hi);
        let w = T::from_f64(tap.w);
        let wc = T::from_f64(1.0 - tap.w);
        for ((o, &a), &b) in row.iter_mut().zip(lo.iter()).zip(hi.iter()) {
            *o = a * wc + b * w;
        }
    }
    out
}

/// Transpose of [`interp_rows`]: scatter output-row gradients back onto the
/// `n_in` source rows with the same weights.
pub fn interp_rows_backward<T: Scalar>(
    grad_out: ArrayView2<T>,
    taps: &[Tap],
    n_in: usize,
) -> Array2<T> {
    let d = grad_out.ncols();
    assert_eq!(grad_out.nrows(), taps.len());
    let mut grad_in = Array2::from_elem((n_in, d), T::from_f64(0.0));
    for (row, tap) in grad_out.rows().into_iter().zip(taps) {
        let w = T::from_f64(tap.w);
        let wc = T::from_f64(1.0 - tap.w);
        // split borrows: lo and hi may alias when tap.w == 0
        {
            let mut lo = grad_in.row_mut(tap.lo);
            for (g, &go) in lo.iter_mut().zip(row.iter()) {
                *g += go * wc;
            }
        }
        if tap.w != 0.0 {
            let mut hi = grad_in.row_mut(tap.hi);
            for (g, &go) in hi.iter_mut().zip(row.iter()) {
                *g += go * w;
            }
        }
    }
    grad_in
}
