//! The split space–time attention video transformer: parameters, layer
//! primitives, and the assembled model with forward and backward passes.

pub mod layers;
pub mod model;
pub mod params;

pub use model::{
    backward, forward, forward_cached, spatial_pos_grid, temporal_pos, tokenize, ForwardCache,
    ForwardOutput, ViewDims, MAX_INFERENCE_FRAMES,
};
pub use params::{
    tensor_decays, AttentionParams, BackboneConfig, BlockParams, HeadParams, LayerNormParams,
    Linear, ModelParams, TensorEntry, TensorEntryMut,
};
