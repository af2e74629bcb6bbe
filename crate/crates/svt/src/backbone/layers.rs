//! Differentiable primitives: linear, layer normalization, GELU, row softmax,
//! and the single-sequence attention core. Every backward pass here is
//! hand-derived and checked against central finite differences in the tests;
//! the model composes these and inherits their correctness.

use crate::scalar::Scalar;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::params::{LayerNormParams, Linear};

/// Normalization epsilon used by every layer norm in the network.
pub const LN_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// y = x · w + b (bias broadcast over rows).
pub fn linear_forward<T: Scalar>(x: ArrayView2<T>, lin: &Linear<T>) -> Array2<T> {
    x.dot(&lin.w) + &lin.b
}

/// Backward of `linear_forward`: accumulates dw += xᵀ·dy and db += Σrows dy
/// into `dlin`, returns dx = dy · wᵀ.
pub fn linear_backward<T: Scalar>(
    x: ArrayView2<T>,
    dy: ArrayView2<T>,
    lin: &Linear<T>,
    dlin: &mut Linear<T>,
) -> Array2<T> {
    let one = T::from_f64(1.0);
    general_mat_mul(one, &x.t(), &dy, one, &mut dlin.w);
    dlin.b += &dy.sum_axis(Axis(0));
    dy.dot(&lin.w.t())
}

/// Per-row statistics needed to backpropagate through a layer norm.
pub struct LayerNormCache<T: Scalar> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

/// Row-wise layer norm: y = gamma ⊙ (x − mean) / sqrt(var + eps) + beta.
pub fn layer_norm_forward<T: Scalar>(
    x: ArrayView2<T>,
    p: &LayerNormParams<T>,
) -> (Array2<T>, LayerNormCache<T>) {
    let (n, d) = x.dim();
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = Array2::from_elem((n, d), T::from_f64(0.0));
    let mut rstd = Array1::from_elem(n, T::from_f64(0.0));
    let mut y = Array2::from_elem((n, d), T::from_f64(0.0));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            * inv_d;
        let r = T::from_f64(1.0) / (var + eps).sqrt();
        rstd[i] = r;
        let mut xh = xhat.row_mut(i);
        let mut yr = y.row_mut(i);
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xh[j] = h;
            yr[j] = p.gamma[j] * h + p.beta[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Backward of `layer_norm_forward`: accumulates dgamma/dbeta, returns dx.
pub fn layer_norm_backward<T: Scalar>(
    dy: ArrayView2<T>,
    cache: &LayerNormCache<T>,
    p: &LayerNormParams<T>,
    dp: &mut LayerNormParams<T>,
) -> Array2<T> {
    let (n, d) = dy.dim();
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dx = Array2::from_elem((n, d), T::from_f64(0.0));
    for i in 0..n {
        let dy_row = dy.row(i);
        let xh = cache.xhat.row(i);
        let r = cache.rstd[i];
        // Parameter gradients.
        for j in 0..d {
            dp.gamma[j] += dy_row[j] * xh[j];
            dp.beta[j] += dy_row[j];
        }
        // dxhat = dy ⊙ gamma; dx = r·(dxhat − mean(dxhat) − xhat·mean(dxhat ⊙ xhat)).
        let mut mean_dxh = T::from_f64(0.0);
        let mut mean_dxh_xh = T::from_f64(0.0);
        for j in 0..d {
            let dxh = dy_row[j] * p.gamma[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        let mut dx_row = dx.row_mut(i);
        for j in 0..d {
            let dxh = dy_row[j] * p.gamma[j];
            dx_row[j] = r * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let one = T::from_f64(1.0);
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let u = c * (x + a * x * x * x);
    half * x * (one + u.tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let one = T::from_f64(1.0);
    let three = T::from_f64(3.0);
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (one + t) + half * x * (one - t * t) * c * (one + three * a * x * x)
}

/// GELU activation, tanh approximation.
pub fn gelu_forward<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(gelu_scalar)
}

/// Backward of GELU given the original pre-activation input.
pub fn gelu_backward<T: Scalar>(x_pre: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = x_pre.mapv(gelu_grad_scalar);
    dx *= dy;
    dx
}

/// Row-wise softmax in place, with max subtraction for stability.
pub fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.outer_iter_mut() {
        let mut max = row[0];
        for &v in row.iter() {
            max = max.max(v);
        }
        let mut sum = T::from_f64(0.0);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::from_f64(1.0) / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Backward of row softmax: ds = p ⊙ (dp − rowsum(dp ⊙ p)).
pub fn softmax_backward_rows<T: Scalar>(p: ArrayView2<T>, dp: ArrayView2<T>) -> Array2<T> {
    let (n, l) = p.dim();
    let mut ds = Array2::from_elem((n, l), T::from_f64(0.0));
    for i in 0..n {
        let pr = p.row(i);
        let dpr = dp.row(i);
        let dot = pr
            .iter()
            .zip(dpr.iter())
            .map(|(&a, &b)| a * b)
            .sum::<T>();
        let mut out = ds.row_mut(i);
        for j in 0..l {
            out[j] = pr[j] * (dpr[j] - dot);
        }
    }
    ds
}

/// Scaled dot-product attention over one sequence and one head:
/// P = softmax(Q·Kᵀ·scale), context = P·V. Returns (context, P).
pub fn attention_seq_forward<T: Scalar>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    scale: T,
) -> (Array2<T>, Array2<T>) {
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|x| x * scale);
    softmax_rows(&mut scores);
    let ctx = scores.dot(&v);
    (ctx, scores)
}

/// Backward of `attention_seq_forward` given the cached P. Returns (dq, dk, dv).
pub fn attention_seq_backward<T: Scalar>(
    p: ArrayView2<T>,
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    dctx: ArrayView2<T>,
    scale: T,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let dv = p.t().dot(&dctx);
    let dp = dctx.dot(&v.t());
    let ds = softmax_backward_rows(p, dp.view());
    let mut dq = ds.dot(&k);
    dq.mapv_inplace(|x| x * scale);
    let mut dk = ds.t().dot(&q);
    dk.mapv_inplace(|x| x * scale);
    (dq, dk, dv)
}
