//! Desk-scale self-supervised video representation learning.
//!
//! A twin-network (student/teacher) video transformer trained by
//! self-distillation over multi-resolution spatiotemporal views: global clips
//! at full resolution and several short local crops, matched across time and
//! scale through a shared projection space. The backbone splits attention
//! into temporal and spatial passes and interpolates learned positional
//! tables so one parameter set serves every clip shape, including longer
//! clips at inference (slow-fast feature fusion).

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod image;
pub mod interp;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod videoio;
pub mod views;

pub use error::{Error, Result};
