//! The video transformer itself: patch tokenization, dynamically resized
//! positional tables, a stack of split space–time attention blocks with a
//! shared classification token, and the projection head — plus the full
//! hand-derived backward pass.
//!
//! Sequence layout: patch tokens live in a (T·S, D) matrix in t-major order
//! (row t·S + s), with the classification token carried as row T·S of the
//! working (T·S + 1, D) matrix. Temporal attention runs over the T tokens at
//! each spatial location (the class token sits out); spatial attention runs
//! over S + 1 tokens (class token first) at each time step, and the class
//! token's attention outputs are averaged across time steps before the output
//! projection.

use crate::error::{Error, Result};
use crate::interp::{interp_rows, interp_rows_backward, linear_taps, Tap};
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView4};

use super::layers::{
    attention_seq_backward, attention_seq_forward, gelu_backward, gelu_forward,
    layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, LayerNormCache,
};
use super::params::{BackboneConfig, BlockParams, ModelParams};

/// Longest clip accepted at inference (slow-fast extension of the temporal
/// positional table).
pub const MAX_INFERENCE_FRAMES: usize = 64;

/// Token-grid geometry of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewDims {
    pub t: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Spatial tokens per frame: grid_h · grid_w.
    pub s: usize,
    /// Patch tokens in the clip: t · s (class token excluded).
    pub n: usize,
}

/// Flatten a clip into per-patch rows: row t·S + (gy·grid_w + gx) holds the
/// patch at (gy, gx) of frame t, pixels in (py, px, channel) order.
pub fn tokenize<T: Scalar>(
    frames: ArrayView4<T>,
    config: &BackboneConfig,
) -> Result<(Array2<T>, ViewDims)> {
    let (t, h, w, c) = frames.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3 channels, got {c}"
        )));
    }
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(
            "clip has an empty dimension".into(),
        ));
    }
    if t > MAX_INFERENCE_FRAMES {
        return Err(Error::ShapeMismatch(format!(
            "clip length {t} exceeds the supported maximum {MAX_INFERENCE_FRAMES}"
        )));
    }
    let p = config.patch_size;
    if h % p != 0 || w % p != 0 {
        return Err(Error::PatchDivisibility(h, w, p));
    }
    let grid_h = h / p;
    let grid_w = w / p;
    let side = config.spatial_side();
    if grid_h > side || grid_w > side {
        return Err(Error::GridTooLarge(grid_h.max(grid_w), side));
    }
    let s_tokens = grid_h * grid_w;
    let n = t * s_tokens;
    let mut x = Array2::from_elem((n, config.patch_dim()), T::from_f64(0.0));
    for ti in 0..t {
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                let mut row = x.row_mut(ti * s_tokens + gy * grid_w + gx);
                let mut col = 0;
                for py in 0..p {
                    for px in 0..p {
                        for ch in 0..3 {
                            row[col] = frames[[ti, gy * p + py, gx * p + px, ch]];
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((
        x,
        ViewDims {
            t,
            grid_h,
            grid_w,
            s: s_tokens,
            n,
        },
    ))
}

/// Spatial positional encodings for a grid_h × grid_w token grid: the learned
/// side × side table resized by separable (bilinear) corner-aligned
/// interpolation. Native grid size reproduces the table bit for bit.
/// Returns the (S, D) grid plus the taps needed for the gradient scatter.
pub fn spatial_pos_grid<T: Scalar>(
    params: &ModelParams<T>,
    grid_h: usize,
    grid_w: usize,
) -> (Array2<T>, Vec<Tap>, Vec<Tap>) {
    let (side, _, d) = params.pos_spatial.dim();
    let flat = params
        .pos_spatial
        .view()
        .into_shape_with_order((side, side * d))
        .expect("table is standard layout");
    let taps_h = linear_taps(side, grid_h);
    let taps_w = linear_taps(side, grid_w);
    let rows = interp_rows(flat, &taps_h); // (grid_h, side·d)
    let mut pos = Array2::from_elem((grid_h * grid_w, d), T::from_f64(0.0));
    for gy in 0..grid_h {
        let row_mat = rows
            .row(gy)
            .into_shape_with_order((side, d))
            .expect("row is contiguous");
        let cols = interp_rows(row_mat, &taps_w); // (grid_w, d)
        for gx in 0..grid_w {
            pos.row_mut(gy * grid_w + gx).assign(&cols.row(gx));
        }
    }
    (pos, taps_h, taps_w)
}

fn spatial_pos_backward<T: Scalar>(
    d_grid: ArrayView2<T>,
    grid_h: usize,
    grid_w: usize,
    taps_h: &[Tap],
    taps_w: &[Tap],
    table_grad: &mut Array3<T>,
) {
    let (side, _, d) = table_grad.dim();
    let mut d_rows = Array2::from_elem((grid_h, side * d), T::from_f64(0.0));
    for gy in 0..grid_h {
        let d_cols = d_grid.slice(s![gy * grid_w..(gy + 1) * grid_w, ..]);
        let d_src = interp_rows_backward(d_cols, taps_w, side); // (side, d)
        d_rows.row_mut(gy).assign(
            &d_src
                .view()
                .into_shape_with_order(side * d)
                .expect("contiguous"),
        );
    }
    let d_flat = interp_rows_backward(d_rows.view(), taps_h, side);
    let mut tg = table_grad
        .view_mut()
        .into_shape_with_order((side, side * d))
        .expect("table is standard layout");
    tg += &d_flat;
}

/// Temporal positional encodings for a T-frame clip: the learned table
/// resized by 1-D corner-aligned interpolation (identity at native length,
/// extension up to 64 frames for slow-fast inference).
pub fn temporal_pos<T: Scalar>(params: &ModelParams<T>, t: usize) -> (Array2<T>, Vec<Tap>) {
    let n_in = params.pos_temporal.nrows();
    let taps = linear_taps(n_in, t);
    (interp_rows(params.pos_temporal.view(), &taps), taps)
}

/// What `forward` exposes to callers.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar> {
    /// Projection-head output f, length proj_dim.
    pub projected: Array1<T>,
    /// Normalized classification token, length embed_dim (the backbone
    /// feature used for evaluation).
    pub cls_backbone: Array1<T>,
    /// Per block: the class token's spatial-attention rows, shape
    /// (T, n_heads, S + 1). Each row sums to one.
    pub spatial_cls_attention: Vec<Array3<T>>,
}

struct BlockCache<T: Scalar> {
    ln_t: LayerNormCache<T>,
    xn_t: Array2<T>,
    qkv_t: Array2<T>,
    /// Softmax matrices of temporal attention, indexed s · n_heads + h.
    p_t: Vec<Array2<T>>,
    ctx_t: Array2<T>,
    ln_s: LayerNormCache<T>,
    xn_s: Array2<T>,
    qkv_s: Array2<T>,
    /// Softmax matrices of spatial attention, indexed t · n_heads + h.
    p_s: Vec<Array2<T>>,
    ctx_s: Array2<T>,
    ln_m: LayerNormCache<T>,
    xn_m: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
}

/// Every intermediate needed by `backward`.
pub struct ForwardCache<T: Scalar> {
    dims: ViewDims,
    x_patches: Array2<T>,
    taps_h: Vec<Tap>,
    taps_w: Vec<Tap>,
    taps_t: Vec<Tap>,
    blocks: Vec<BlockCache<T>>,
    ln_f: LayerNormCache<T>,
    cls_backbone: Array2<T>,
    h1_pre: Array2<T>,
    h1_act: Array2<T>,
    h2_pre: Array2<T>,
    h2_act: Array2<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn dims(&self) -> ViewDims {
        self.dims
    }

    /// All softmax matrices of the clip (for normalization checks).
    pub fn attention_rows(&self) -> impl Iterator<Item = &Array2<T>> {
        self.blocks
            .iter()
            .flat_map(|b| b.p_t.iter().chain(b.p_s.iter()))
    }
}

/// Gather (q, k, v) of one head for the sequence given by `rows`.
fn head_seq_qkv<T: Scalar>(
    qkv: &Array2<T>,
    rows: &[usize],
    d: usize,
    h: usize,
    dh: usize,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let l = rows.len();
    let zero = T::from_f64(0.0);
    let mut q = Array2::from_elem((l, dh), zero);
    let mut k = Array2::from_elem((l, dh), zero);
    let mut v = Array2::from_elem((l, dh), zero);
    for (i, &r) in rows.iter().enumerate() {
        let row = qkv.row(r);
        for j in 0..dh {
            q[[i, j]] = row[h * dh + j];
            k[[i, j]] = row[d + h * dh + j];
            v[[i, j]] = row[2 * d + h * dh + j];
        }
    }
    (q, k, v)
}

/// Accumulate per-head (dq, dk, dv) back into the fused dqkv matrix.
fn scatter_head_grads<T: Scalar>(
    dqkv: &mut Array2<T>,
    rows: &[usize],
    d: usize,
    h: usize,
    dh: usize,
    dq: &Array2<T>,
    dk: &Array2<T>,
    dv: &Array2<T>,
) {
    for (i, &r) in rows.iter().enumerate() {
        let mut row = dqkv.row_mut(r);
        for j in 0..dh {
            row[h * dh + j] += dq[[i, j]];
            row[d + h * dh + j] += dk[[i, j]];
            row[2 * d + h * dh + j] += dv[[i, j]];
        }
    }
}

fn block_forward<T: Scalar>(
    x: &Array2<T>,
    blk: &BlockParams<T>,
    dims: &ViewDims,
    n_heads: usize,
) -> (Array2<T>, BlockCache<T>, Array3<T>) {
    let (t, s_tokens, n) = (dims.t, dims.s, dims.n);
    let d = x.ncols();
    let dh = d / n_heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let zero = T::from_f64(0.0);

    // --- Temporal attention over the T tokens at each spatial location.
    // The class token (row n) does not participate.
    let (xn_t, ln_t) = layer_norm_forward(x.slice(s![0..n, ..]), &blk.norm_t);
    let qkv_t = linear_forward(xn_t.view(), &blk.attn_t.qkv);
    let mut ctx_t = Array2::from_elem((n, d), zero);
    let mut p_t = Vec::with_capacity(s_tokens * n_heads);
    for s_idx in 0..s_tokens {
        let rows: Vec<usize> = (0..t).map(|ti| ti * s_tokens + s_idx).collect();
        for h in 0..n_heads {
            let (q, k, v) = head_seq_qkv(&qkv_t, &rows, d, h, dh);
            let (ctx, p) = attention_seq_forward(q.view(), k.view(), v.view(), scale);
            for (i, &r) in rows.iter().enumerate() {
                ctx_t
                    .slice_mut(s![r, h * dh..(h + 1) * dh])
                    .assign(&ctx.row(i));
            }
            p_t.push(p);
        }
    }
    let y_t = linear_forward(ctx_t.view(), &blk.attn_t.out);
    let mut x_mid = x.clone();
    {
        let mut patches = x_mid.slice_mut(s![0..n, ..]);
        patches += &y_t;
    }

    // --- Spatial attention over S + 1 tokens (class token first) at each
    // time step; class-token outputs averaged across time steps.
    let (xn_s, ln_s) = layer_norm_forward(x_mid.view(), &blk.norm_s);
    let qkv_s = linear_forward(xn_s.view(), &blk.attn_s.qkv);
    let mut ctx_s = Array2::from_elem((n + 1, d), zero);
    let mut p_s = Vec::with_capacity(t * n_heads);
    let mut cls_attn = Array3::from_elem((t, n_heads, s_tokens + 1), zero);
    let inv_t = T::from_f64(1.0 / t as f64);
    for t_idx in 0..t {
        let mut rows = Vec::with_capacity(s_tokens + 1);
        rows.push(n);
        rows.extend(t_idx * s_tokens..(t_idx + 1) * s_tokens);
        for h in 0..n_heads {
            let (q, k, v) = head_seq_qkv(&qkv_s, &rows, d, h, dh);
            let (ctx, p) = attention_seq_forward(q.view(), k.view(), v.view(), scale);
            for (i, &r) in rows.iter().enumerate().skip(1) {
                ctx_s
                    .slice_mut(s![r, h * dh..(h + 1) * dh])
                    .assign(&ctx.row(i));
            }
            // Class-token context: average across time steps.
            {
                let mut seg = ctx_s.slice_mut(s![n, h * dh..(h + 1) * dh]);
                for j in 0..dh {
                    seg[j] += ctx[[0, j]] * inv_t;
                }
            }
            cls_attn.slice_mut(s![t_idx, h, ..]).assign(&p.row(0));
            p_s.push(p);
        }
    }
    let y_s = linear_forward(ctx_s.view(), &blk.attn_s.out);
    let x_mid2 = &x_mid + &y_s;

    // --- Feed-forward, class token included as an ordinary row.
    let (xn_m, ln_m) = layer_norm_forward(x_mid2.view(), &blk.norm_mlp);
    let h_pre = linear_forward(xn_m.view(), &blk.mlp_fc1);
    let h_act = gelu_forward(&h_pre);
    let y_m = linear_forward(h_act.view(), &blk.mlp_fc2);
    let x_out = &x_mid2 + &y_m;

    (
        x_out,
        BlockCache {
            ln_t,
            xn_t,
            qkv_t,
            p_t,
            ctx_t,
            ln_s,
            xn_s,
            qkv_s,
            p_s,
            ctx_s,
            ln_m,
            xn_m,
            h_pre,
            h_act,
        },
        cls_attn,
    )
}

fn block_backward<T: Scalar>(
    dx_out: &Array2<T>,
    c: &BlockCache<T>,
    blk: &BlockParams<T>,
    gblk: &mut BlockParams<T>,
    dims: &ViewDims,
    n_heads: usize,
) -> Array2<T> {
    let (t, s_tokens, n) = (dims.t, dims.s, dims.n);
    let d = dx_out.ncols();
    let dh = d / n_heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let zero = T::from_f64(0.0);
    let inv_t = T::from_f64(1.0 / t as f64);

    // --- Feed-forward backward.
    let dh_act = linear_backward(c.h_act.view(), dx_out.view(), &blk.mlp_fc2, &mut gblk.mlp_fc2);
    let dh_pre = gelu_backward(&c.h_pre, &dh_act);
    let dxn_m = linear_backward(c.xn_m.view(), dh_pre.view(), &blk.mlp_fc1, &mut gblk.mlp_fc1);
    let dx_mid2 =
        dx_out + &layer_norm_backward(dxn_m.view(), &c.ln_m, &blk.norm_mlp, &mut gblk.norm_mlp);

    // --- Spatial attention backward.
    let dctx_s = linear_backward(
        c.ctx_s.view(),
        dx_mid2.view(),
        &blk.attn_s.out,
        &mut gblk.attn_s.out,
    );
    let mut dqkv_s = Array2::from_elem((n + 1, 3 * d), zero);
    for t_idx in 0..t {
        let mut rows = Vec::with_capacity(s_tokens + 1);
        rows.push(n);
        rows.extend(t_idx * s_tokens..(t_idx + 1) * s_tokens);
        for h in 0..n_heads {
            let (q, k, v) = head_seq_qkv(&c.qkv_s, &rows, d, h, dh);
            let p = &c.p_s[t_idx * n_heads + h];
            let mut dctx_seq = Array2::from_elem((s_tokens + 1, dh), zero);
            for j in 0..dh {
                dctx_seq[[0, j]] = dctx_s[[n, h * dh + j]] * inv_t;
            }
            for (i, &r) in rows.iter().enumerate().skip(1) {
                for j in 0..dh {
                    dctx_seq[[i, j]] = dctx_s[[r, h * dh + j]];
                }
            }
            let (dq, dk, dv) =
                attention_seq_backward(p.view(), q.view(), k.view(), v.view(), dctx_seq.view(), scale);
            scatter_head_grads(&mut dqkv_s, &rows, d, h, dh, &dq, &dk, &dv);
        }
    }
    let dxn_s = linear_backward(
        c.xn_s.view(),
        dqkv_s.view(),
        &blk.attn_s.qkv,
        &mut gblk.attn_s.qkv,
    );
    let dx_mid =
        &dx_mid2 + &layer_norm_backward(dxn_s.view(), &c.ln_s, &blk.norm_s, &mut gblk.norm_s);

    // --- Temporal attention backward (patch rows only).
    let dy_t = dx_mid.slice(s![0..n, ..]);
    let dctx_t = linear_backward(c.ctx_t.view(), dy_t, &blk.attn_t.out, &mut gblk.attn_t.out);
    let mut dqkv_t = Array2::from_elem((n, 3 * d), zero);
    for s_idx in 0..s_tokens {
        let rows: Vec<usize> = (0..t).map(|ti| ti * s_tokens + s_idx).collect();
        for h in 0..n_heads {
            let (q, k, v) = head_seq_qkv(&c.qkv_t, &rows, d, h, dh);
            let p = &c.p_t[s_idx * n_heads + h];
            let mut dctx_seq = Array2::from_elem((t, dh), zero);
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..dh {
                    dctx_seq[[i, j]] = dctx_t[[r, h * dh + j]];
                }
            }
            let (dq, dk, dv) =
                attention_seq_backward(p.view(), q.view(), k.view(), v.view(), dctx_seq.view(), scale);
            scatter_head_grads(&mut dqkv_t, &rows, d, h, dh, &dq, &dk, &dv);
        }
    }
    let dxn_t = linear_backward(
        c.xn_t.view(),
        dqkv_t.view(),
        &blk.attn_t.qkv,
        &mut gblk.attn_t.qkv,
    );
    let dpatches = layer_norm_backward(dxn_t.view(), &c.ln_t, &blk.norm_t, &mut gblk.norm_t);

    let mut dx_in = dx_mid;
    {
        let mut patch_rows = dx_in.slice_mut(s![0..n, ..]);
        patch_rows += &dpatches;
    }
    dx_in
}

/// Full forward pass, keeping every intermediate needed for `backward`.
pub fn forward_cached<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    frames: ArrayView4<T>,
) -> Result<(ForwardOutput<T>, ForwardCache<T>)> {
    let (x_patches, dims) = tokenize(frames, config)?;
    let d = config.embed_dim;
    let tokens = linear_forward(x_patches.view(), &params.patch_embed);
    let (pos_s, taps_h, taps_w) = spatial_pos_grid(params, dims.grid_h, dims.grid_w);
    let (pos_t, taps_t) = temporal_pos(params, dims.t);

    let mut x = Array2::from_elem((dims.n + 1, d), T::from_f64(0.0));
    for ti in 0..dims.t {
        for si in 0..dims.s {
            let r = ti * dims.s + si;
            let mut row = x.row_mut(r);
            for j in 0..d {
                row[j] = tokens[[r, j]] + pos_s[[si, j]] + pos_t[[ti, j]];
            }
        }
    }
    x.row_mut(dims.n).assign(&params.cls);

    let mut blocks = Vec::with_capacity(config.n_blocks);
    let mut cls_attn_all = Vec::with_capacity(config.n_blocks);
    for blk in &params.blocks {
        let (x_next, cache, cls_attn) = block_forward(&x, blk, &dims, config.n_heads);
        x = x_next;
        blocks.push(cache);
        cls_attn_all.push(cls_attn);
    }

    let (cls_backbone, ln_f) = layer_norm_forward(x.slice(s![dims.n..dims.n + 1, ..]), &params.final_norm);
    let h1_pre = linear_forward(cls_backbone.view(), &params.head.fc1);
    let h1_act = gelu_forward(&h1_pre);
    let h2_pre = linear_forward(h1_act.view(), &params.head.fc2);
    let h2_act = gelu_forward(&h2_pre);
    let f = linear_forward(h2_act.view(), &params.head.proj);

    let output = ForwardOutput {
        projected: f.row(0).to_owned(),
        cls_backbone: cls_backbone.row(0).to_owned(),
        spatial_cls_attention: cls_attn_all,
    };
    let cache = ForwardCache {
        dims,
        x_patches,
        taps_h,
        taps_w,
        taps_t,
        blocks,
        ln_f,
        cls_backbone,
        h1_pre,
        h1_act,
        h2_pre,
        h2_act,
    };
    Ok((output, cache))
}

/// Forward pass without retaining the backward cache.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    frames: ArrayView4<T>,
) -> Result<ForwardOutput<T>> {
    forward_cached(params, config, frames).map(|(out, _)| out)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient on the projection output f. Returns a gradient struct with
/// the same shapes and tensor names as the parameters.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    cache: &ForwardCache<T>,
    d_projected: ArrayView1<T>,
) -> ModelParams<T> {
    let mut grads = ModelParams::zeros(config);
    let dims = cache.dims;
    let d = config.embed_dim;

    // --- Projection head.
    let dproj = d_projected
        .into_shape_with_order((1, d_projected.len()))
        .expect("vector reshape");
    let dh2_act = linear_backward(cache.h2_act.view(), dproj, &params.head.proj, &mut grads.head.proj);
    let dh2_pre = gelu_backward(&cache.h2_pre, &dh2_act);
    let dh1_act = linear_backward(cache.h1_act.view(), dh2_pre.view(), &params.head.fc2, &mut grads.head.fc2);
    let dh1_pre = gelu_backward(&cache.h1_pre, &dh1_act);
    let dcls_backbone = linear_backward(
        cache.cls_backbone.view(),
        dh1_pre.view(),
        &params.head.fc1,
        &mut grads.head.fc1,
    );

    // --- Final norm back to the class-token row.
    let dcls_row = layer_norm_backward(
        dcls_backbone.view(),
        &cache.ln_f,
        &params.final_norm,
        &mut grads.final_norm,
    );

    let mut dx = Array2::from_elem((dims.n + 1, d), T::from_f64(0.0));
    dx.row_mut(dims.n).assign(&dcls_row.row(0));

    // --- Blocks in reverse.
    for (blk, (cache_blk, gblk)) in params
        .blocks
        .iter()
        .zip(cache.blocks.iter().zip(grads.blocks.iter_mut()))
        .rev()
    {
        dx = block_backward(&dx, cache_blk, blk, gblk, &dims, config.n_heads);
    }

    // --- Class token parameter.
    grads.cls += &dx.row(dims.n);

    // --- Positional tables.
    let dtok = dx.slice(s![0..dims.n, ..]);
    let mut d_pos_t = Array2::from_elem((dims.t, d), T::from_f64(0.0));
    let mut d_pos_s = Array2::from_elem((dims.s, d), T::from_f64(0.0));
    for ti in 0..dims.t {
        for si in 0..dims.s {
            let row = dtok.row(ti * dims.s + si);
            for j in 0..d {
                d_pos_t[[ti, j]] += row[j];
                d_pos_s[[si, j]] += row[j];
            }
        }
    }
    let n_in = params.pos_temporal.nrows();
    grads.pos_temporal += &interp_rows_backward(d_pos_t.view(), &cache.taps_t, n_in);
    spatial_pos_backward(
        d_pos_s.view(),
        dims.grid_h,
        dims.grid_w,
        &cache.taps_h,
        &cache.taps_w,
        &mut grads.pos_spatial,
    );

    // --- Patch embedding.
    let _ = linear_backward(
        cache.x_patches.view(),
        dtok,
        &params.patch_embed,
        &mut grads.patch_embed,
    );

    grads
}
