//! Pixel-level frame operations: normalization, bilinear resize, cropping,
//! and the augmentation primitives. Everything is a pure function of its
//! inputs — identical inputs give bit-identical outputs on every platform.

use crate::interp::linear_taps;
use crate::scalar::Scalar;
use crate::videoio::RawVideo;
use ndarray::{s, Array4, ArrayView4};

/// Rec. 601 luma weights, used for grayscale and saturation.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Gather `indices` from a raw video into float frames normalized to [0,1].
pub fn gather_frames<T: Scalar>(video: &RawVideo, indices: &[usize]) -> Array4<T> {
    let (_, h, w, c) = video.frames().dim();
    let scale = 1.0 / 255.0;
    let mut out = Array4::from_elem((indices.len(), h, w, c), T::from_f64(0.0));
    for (mut dst, &idx) in out.outer_iter_mut().zip(indices) {
        let src = video.frames().index_axis(ndarray::Axis(0), idx);
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = T::from_f64(s as f64 * scale);
        }
    }
    out
}

/// Spatial crop: (T, H, W, C) -> (T, crop_h, crop_w, C).
pub fn crop_frames<T: Scalar>(
    frames: ArrayView4<T>,
    top: usize,
    left: usize,
    crop_h: usize,
    crop_w: usize,
) -> Array4<T> {
    frames
        .slice(s![.., top..top + crop_h, left..left + crop_w, ..])
        .to_owned()
}

/// Corner-aligned bilinear resize of every frame: (T, H, W, C) -> (T, out_h, out_w, C).
/// A same-size resize returns the input bit for bit. Both passes run on
/// contiguous slices; this is on the hot path of every sampled view.
pub fn resize_frames<T: Scalar>(frames: ArrayView4<T>, out_h: usize, out_w: usize) -> Array4<T> {
    let (t, h, w, c) = frames.dim();
    if h == out_h && w == out_w {
        return frames.to_owned();
    }
    let contiguous = frames.as_standard_layout();
    let src = contiguous.as_slice().expect("standard layout is contiguous");
    let taps_h = linear_taps(h, out_h);
    let taps_w = linear_taps(w, out_w);

    // Pass 1: rows. (T, H, W, C) -> (T, out_h, W, C)
    let row_len = w * c;
    let mut rows = vec![T::from_f64(0.0); t * out_h * row_len];
    for ti in 0..t {
        let src_f = &src[ti * h * row_len..][..h * row_len];
        let dst_f = &mut rows[ti * out_h * row_len..][..out_h * row_len];
        for (i, tap) in taps_h.iter().enumerate() {
            let lo = &src_f[tap.lo * row_len..][..row_len];
            let hi = &src_f[tap.hi * row_len..][..row_len];
            let wt = T::from_f64(tap.w);
            let wc = T::from_f64(1.0 - tap.w);
            let out_row = &mut dst_f[i * row_len..][..row_len];
            for ((o, &a), &b) in out_row.iter_mut().zip(lo).zip(hi) {
                *o = a * wc + b * wt;
            }
        }
    }

    // Pass 2: columns. (T, out_h, W, C) -> (T, out_h, out_w, C)
    let out_row_len = out_w * c;
    let mut out = vec![T::from_f64(0.0); t * out_h * out_row_len];
    for (src_r, dst_r) in rows.chunks_exact(row_len).zip(out.chunks_exact_mut(out_row_len)) {
        for (j, tap) in taps_w.iter().enumerate() {
            let wt = T::from_f64(tap.w);
            let wc = T::from_f64(1.0 - tap.w);
            let lo = &src_r[tap.lo * c..][..c];
            let hi = &src_r[tap.hi * c..][..c];
            let dst = &mut dst_r[j * c..][..c];
            for ((o, &a), &b) in dst.iter_mut().zip(lo).zip(hi) {
                *o = a * wc + b * wt;
            }
        }
    }
    Array4::from_shape_vec((t, out_h, out_w, c), out).expect("dims match buffer")
}

fn luma_of<T: Scalar>(r: T, g: T, b: T) -> T {
    r * T::from_f64(LUMA[0]) + g * T::from_f64(LUMA[1]) + b * T::from_f64(LUMA[2])
}

/// Multiply all intensities by `factor`.
pub fn adjust_brightness<T: Scalar>(frames: &mut Array4<T>, factor: f64) {
    let f = T::from_f64(factor);
    for v in frames.iter_mut() {
        *v *= f;
    }
}

/// Blend each frame toward its own mean luma: `out = (x - m) * factor + m`.
pub fn adjust_contrast<T: Scalar>(frames: &mut Array4<T>, factor: f64) {
    let f = T::from_f64(factor);
    for mut frame in frames.outer_iter_mut() {
        let (h, w, _) = frame.dim();
        let mut acc = T::from_f64(0.0);
        for px in frame.rows() {
            acc += luma_of(px[0], px[1], px[2]);
        }
        let m = acc / T::from_f64((h * w) as f64);
        for v in frame.iter_mut() {
            *v = (*v - m) * f + m;
        }
    }
}

/// Blend each pixel toward its own luma: factor 0 = grayscale, 1 = identity.
pub fn adjust_saturation<T: Scalar>(frames: &mut Array4<T>, factor: f64) {
    let f = T::from_f64(factor);
    let one_minus = T::from_f64(1.0 - factor);
    for mut frame in frames.outer_iter_mut() {
        for mut px in frame.rows_mut() {
            let l = luma_of(px[0], px[1], px[2]) * one_minus;
            px[0] = px[0] * f + l;
            px[1] = px[1] * f + l;
            px[2] = px[2] * f + l;
        }
    }
}

/// Replace each pixel's channels with its luma.
pub fn to_grayscale<T: Scalar>(frames: &mut Array4<T>) {
    for mut frame in frames.outer_iter_mut() {
        for mut px in frame.rows_mut() {
            let l = luma_of(px[0], px[1], px[2]);
            px[0] = l;
            px[1] = l;
            px[2] = l;
        }
    }
}

/// Invert intensities above `threshold`: `x > thr ⇒ 1 - x`.
pub fn solarize<T: Scalar>(frames: &mut Array4<T>, threshold: f64) {
    let thr = T::from_f64(threshold);
    let one = T::from_f64(1.0);
    for v in frames.iter_mut() {
        if *v > thr {
            *v = one - *v;
        }
    }
}

/// Separable Gaussian blur with clamped borders, identical for every frame.
pub fn gaussian_blur<T: Scalar>(frames: &mut Array4<T>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (2.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for d in -radius..=radius {
        let w = (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        norm += w;
    }
    for w in kernel.iter_mut() {
        *w /= norm;
    }
    let kernel: Vec<T> = kernel.into_iter().map(T::from_f64).collect();

    let (t, h, w, c) = frames.dim();
    let mut tmp = Array4::from_elem((t, h, w, c), T::from_f64(0.0));
    // horizontal pass
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = T::from_f64(0.0);
                    for (ki, kw) in kernel.iter().enumerate() {
                        let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1);
                        acc += frames[[ti, y, sx as usize, ch]] * *kw;
                    }
                    tmp[[ti, y, x, ch]] = acc;
                }
            }
        }
    }
    // vertical pass
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = T::from_f64(0.0);
                    for (ki, kw) in kernel.iter().enumerate() {
                        let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1);
                        acc += tmp[[ti, sy as usize, x, ch]] * *kw;
                    }
                    frames[[ti, y, x, ch]] = acc;
                }
            }
        }
    }
}

/// Mirror every frame left-right.
pub fn hflip<T: Scalar>(frames: &Array4<T>) -> Array4<T> {
    frames.slice(s![.., .., ..;-1, ..]).to_owned()
}

/// Clamp all intensities into [0, 1].
pub fn clamp_unit<T: Scalar>(frames: &mut Array4<T>) {
    let zero = T::from_f64(0.0);
    let one = T::from_f64(1.0);
    for v in frames.iter_mut() {
        *v = (*v).max(zero).min(one);
    }
}
