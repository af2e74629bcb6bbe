//! Parameter containers, initialization, and the named-tensor view shared by
//! the optimizer, the EMA update, and checkpoint serialization.

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array3};

/// Architecture hyperparameters. `desk()` is the default used throughout the
/// test suite; the full-scale values fit the same structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    /// Capacity of the learned spatial positional table (a square grid).
    pub max_spatial_tokens: usize,
    /// Capacity of the learned temporal positional table.
    pub max_temporal_tokens: usize,
    /// Projection-head output width.
    pub proj_dim: usize,
}

impl BackboneConfig {
    /// Desk-scale defaults: small enough for CPU test suites.
    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            n_blocks: 4,
            n_heads: 4,
            patch_size: 16,
            max_spatial_tokens: 196,
            max_temporal_tokens: 16,
            proj_dim: 32,
        }
    }

    /// Minimal config for gradient-oracle tests.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 8,
            n_blocks: 1,
            n_heads: 2,
            patch_size: 16,
            max_spatial_tokens: 196,
            max_temporal_tokens: 16,
            proj_dim: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_blocks == 0 || self.n_heads == 0 || self.proj_dim == 0 {
            return Err(Error::ShapeMismatch(
                "backbone dimensions must be positive".into(),
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        let side = self.spatial_side();
        if side * side != self.max_spatial_tokens {
            return Err(Error::ShapeMismatch(format!(
                "max_spatial_tokens {} is not a perfect square",
                self.max_spatial_tokens
            )));
        }
        if self.patch_size == 0 || self.max_temporal_tokens == 0 {
            return Err(Error::ShapeMismatch(
                "patch_size and max_temporal_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Side of the square spatial positional grid (14 for 196 tokens).
    pub fn spatial_side(&self) -> usize {
        (self.max_spatial_tokens as f64).sqrt().round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Flattened patch length: patch_size * patch_size * 3 channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

/// y = x · w + b, with `w` of shape (in, out).
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: Array2::from_elem((n_in, n_out), T::from_f64(0.0)),
            b: Array1::from_elem(n_out, T::from_f64(0.0)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<T: Scalar> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    fn zeros(d: usize) -> Self {
        Self {
            gamma: Array1::from_elem(d, T::from_f64(0.0)),
            beta: Array1::from_elem(d, T::from_f64(0.0)),
        }
    }
}

/// One attention sublayer: fused query/key/value projection and the output
/// projection.
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Scalar> {
    pub qkv: Linear<T>,
    pub out: Linear<T>,
}

impl<T: Scalar> AttentionParams<T> {
    fn zeros(d: usize) -> Self {
        Self {
            qkv: Linear::zeros(d, 3 * d),
            out: Linear::zeros(d, d),
        }
    }
}

/// One encoder block: temporal attention, spatial attention, feed-forward,
/// each with its own pre-normalization.
#[derive(Debug, Clone)]
pub struct BlockParams<T: Scalar> {
    pub norm_t: LayerNormParams<T>,
    pub attn_t: AttentionParams<T>,
    pub norm_s: LayerNormParams<T>,
    pub attn_s: AttentionParams<T>,
    pub norm_mlp: LayerNormParams<T>,
    pub mlp_fc1: Linear<T>,
    pub mlp_fc2: Linear<T>,
}

impl<T: Scalar> BlockParams<T> {
    fn zeros(d: usize) -> Self {
        Self {
            norm_t: LayerNormParams::zeros(d),
            attn_t: AttentionParams::zeros(d),
            norm_s: LayerNormParams::zeros(d),
            attn_s: AttentionParams::zeros(d),
            norm_mlp: LayerNormParams::zeros(d),
            mlp_fc1: Linear::zeros(d, 4 * d),
            mlp_fc2: Linear::zeros(4 * d, d),
        }
    }
}

/// Projection head: 3-layer MLP, hidden width 4·embed_dim, GELU between
/// layers, final linear layer to proj_dim.
#[derive(Debug, Clone)]
pub struct HeadParams<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> HeadParams<T> {
    fn zeros(d: usize, k: usize) -> Self {
        Self {
            fc1: Linear::zeros(d, 4 * d),
            fc2: Linear::zeros(4 * d, 4 * d),
            proj: Linear::zeros(4 * d, k),
        }
    }
}

/// Every learned tensor of the network. Gradients reuse this struct (same
/// shapes, same names), as do the Adam moment buffers.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    pub patch_embed: Linear<T>,
    /// (side, side, embed_dim) learned spatial positional table.
    pub pos_spatial: Array3<T>,
    /// (max_temporal, embed_dim) learned temporal positional table.
    pub pos_temporal: Array2<T>,
    /// Classification-token vector (embed_dim).
    pub cls: Array1<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_norm: LayerNormParams<T>,
    pub head: HeadParams<T>,
}

/// Read-only named view of one tensor.
pub struct TensorEntry<'a, T> {
    pub name: String,
    pub data: &'a [T],
    pub shape: Vec<usize>,
}

/// Mutable named view of one tensor.
pub struct TensorEntryMut<'a, T> {
    pub name: String,
    pub data: &'a mut [T],
    pub shape: Vec<usize>,
}

/// Whether weight decay applies to the tensor with this name: everything
/// except normalization parameters and the classification token.
pub fn tensor_decays(name: &str) -> bool {
    !(name.contains("norm") || name == "cls")
}

macro_rules! push_linear {
    ($out:ident, $prefix:expr, $lin:expr, $entry:ident, $as_slice:ident) => {{
        let lin = $lin;
        let w_shape = lin.w.shape().to_vec();
        $out.push($entry {
            name: format!("{}/w", $prefix),
            data: lin.w.$as_slice().expect("standard layout"),
            shape: w_shape,
        });
        let b_shape = lin.b.shape().to_vec();
        $out.push($entry {
            name: format!("{}/b", $prefix),
            data: lin.b.$as_slice().expect("standard layout"),
            shape: b_shape,
        });
    }};
}

macro_rules! push_norm {
    ($out:ident, $prefix:expr, $norm:expr, $entry:ident, $as_slice:ident) => {{
        let norm = $norm;
        let g_shape = norm.gamma.shape().to_vec();
        $out.push($entry {
            name: format!("{}/gamma", $prefix),
            data: norm.gamma.$as_slice().expect("standard layout"),
            shape: g_shape,
        });
        let b_shape = norm.beta.shape().to_vec();
        $out.push($entry {
            name: format!("{}/beta", $prefix),
            data: norm.beta.$as_slice().expect("standard layout"),
            shape: b_shape,
        });
    }};
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &BackboneConfig) -> Self {
        let d = config.embed_dim;
        let side = config.spatial_side();
        Self {
            patch_embed: Linear::zeros(config.patch_dim(), d),
            pos_spatial: Array3::from_elem((side, side, d), T::from_f64(0.0)),
            pos_temporal: Array2::from_elem((config.max_temporal_tokens, d), T::from_f64(0.0)),
            cls: Array1::from_elem(d, T::from_f64(0.0)),
            blocks: (0..config.n_blocks).map(|_| BlockParams::zeros(d)).collect(),
            final_norm: LayerNormParams::zeros(d),
            head: HeadParams::zeros(d, config.proj_dim),
        }
    }

    /// Random initialization: truncated normal (sigma 0.02, clipped at two
    /// sigma) for weights and both positional tables and the class token;
    /// zeros for biases and norm offsets; ones for norm scales. Fill order is
    /// the named-tensor order, so identical (config, seed) reproduce
    /// identical parameters.
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut rng = rng::stream(seed, &[purpose::INIT]);
        for entry in params.tensors_mut() {
            if entry.name.ends_with("/b") || entry.name.ends_with("/beta") {
                // zeros, already there
            } else if entry.name.ends_with("/gamma") {
                entry.data.fill(T::from_f64(1.0));
            } else {
                for v in entry.data.iter_mut() {
                    *v = T::from_f64(rng::trunc_normal(&mut rng, 0.02));
                }
            }
        }
        Ok(params)
    }

    /// Named view of every tensor, in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorEntry<'_, T>> {
        let mut out: Vec<TensorEntry<'_, T>> = Vec::new();
        push_linear!(out, "patch_embed", &self.patch_embed, TensorEntry, as_slice);
        out.push(TensorEntry {
            name: "pos/spatial".into(),
            data: self.pos_spatial.as_slice().expect("standard layout"),
            shape: self.pos_spatial.shape().to_vec(),
        });
        out.push(TensorEntry {
            name: "pos/temporal".into(),
            data: self.pos_temporal.as_slice().expect("standard layout"),
            shape: self.pos_temporal.shape().to_vec(),
        });
        out.push(TensorEntry {
            name: "cls".into(),
            data: self.cls.as_slice().expect("standard layout"),
            shape: self.cls.shape().to_vec(),
        });
        for (i, blk) in self.blocks.iter().enumerate() {
            push_norm!(out, format!("block{i}/norm_t"), &blk.norm_t, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/attn_t/qkv"), &blk.attn_t.qkv, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/attn_t/out"), &blk.attn_t.out, TensorEntry, as_slice);
            push_norm!(out, format!("block{i}/norm_s"), &blk.norm_s, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/attn_s/qkv"), &blk.attn_s.qkv, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/attn_s/out"), &blk.attn_s.out, TensorEntry, as_slice);
            push_norm!(out, format!("block{i}/norm_mlp"), &blk.norm_mlp, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/mlp/fc1"), &blk.mlp_fc1, TensorEntry, as_slice);
            push_linear!(out, format!("block{i}/mlp/fc2"), &blk.mlp_fc2, TensorEntry, as_slice);
        }
        push_norm!(out, "final_norm", &self.final_norm, TensorEntry, as_slice);
        push_linear!(out, "head/fc1", &self.head.fc1, TensorEntry, as_slice);
        push_linear!(out, "head/fc2", &self.head.fc2, TensorEntry, as_slice);
        push_linear!(out, "head/proj", &self.head.proj, TensorEntry, as_slice);
        out
    }

    /// Mutable named view of every tensor, same order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<TensorEntryMut<'_, T>> {
        let mut out: Vec<TensorEntryMut<'_, T>> = Vec::new();
        push_linear!(out, "patch_embed", &mut self.patch_embed, TensorEntryMut, as_slice_mut);
        out.push(TensorEntryMut {
            name: "pos/spatial".into(),
            shape: self.pos_spatial.shape().to_vec(),
            data: self.pos_spatial.as_slice_mut().expect("standard layout"),
        });
        out.push(TensorEntryMut {
            name: "pos/temporal".into(),
            shape: self.pos_temporal.shape().to_vec(),
            data: self.pos_temporal.as_slice_mut().expect("standard layout"),
        });
        out.push(TensorEntryMut {
            name: "cls".into(),
            shape: self.cls.shape().to_vec(),
            data: self.cls.as_slice_mut().expect("standard layout"),
        });
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            push_norm!(out, format!("block{i}/norm_t"), &mut blk.norm_t, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/attn_t/qkv"), &mut blk.attn_t.qkv, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/attn_t/out"), &mut blk.attn_t.out, TensorEntryMut, as_slice_mut);
            push_norm!(out, format!("block{i}/norm_s"), &mut blk.norm_s, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/attn_s/qkv"), &mut blk.attn_s.qkv, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/attn_s/out"), &mut blk.attn_s.out, TensorEntryMut, as_slice_mut);
            push_norm!(out, format!("block{i}/norm_mlp"), &mut blk.norm_mlp, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/mlp/fc1"), &mut blk.mlp_fc1, TensorEntryMut, as_slice_mut);
            push_linear!(out, format!("block{i}/mlp/fc2"), &mut blk.mlp_fc2, TensorEntryMut, as_slice_mut);
        }
        push_norm!(out, "final_norm", &mut self.final_norm, TensorEntryMut, as_slice_mut);
        push_linear!(out, "head/fc1", &mut self.head.fc1, TensorEntryMut, as_slice_mut);
        push_linear!(out, "head/fc2", &mut self.head.fc2, TensorEntryMut, as_slice_mut);
        push_linear!(out, "head/proj", &mut self.head.proj, TensorEntryMut, as_slice_mut);
        out
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// True if every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, elementwise over every tensor.
    ///
    /// Both sides must come from the same configuration; tensor order and
    /// shapes are assumed to match (debug-asserted).
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        debug_assert_eq!(mine.len(), theirs.len());
        for (dst, src) in mine.iter_mut().zip(theirs.iter()) {
            debug_assert_eq!(dst.name, src.name);
            debug_assert_eq!(dst.data.len(), src.data.len());
            for (d, &s) in dst.data.iter_mut().zip(src.data.iter()) {
                *d = *d + scale * s;
            }
        }
    }

    /// `self *= scale`, elementwise over every tensor.
    pub fn scale_by(&mut self, scale: T) {
        for entry in &mut self.tensors_mut() {
            for d in entry.data.iter_mut() {
                *d = *d * scale;
            }
        }
    }
}
