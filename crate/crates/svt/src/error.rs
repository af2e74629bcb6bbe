//! Crate-wide error type and result alias.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    // --- video container format ---
    #[error("bad magic: not a valid video file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("empty video: header declares zero frames")]
    EmptyVideo,
    #[error("dimension fields zero in header ({0})")]
    ZeroDimension(&'static str),
    #[error("unsupported channel count {0} (expected 3)")]
    ChannelCount(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    // --- synthetic generation ---
    #[error("trajectory would exit frame: span {span:.1}px exceeds frame extent {extent}px")]
    TrajectoryExit { span: f64, extent: usize },

    // --- view sampling ---
    #[error("video too short: {len} frames, need at least {needed}")]
    VideoTooShort { len: usize, needed: usize },
    #[error("unsupported frame count {got} for {role} view (allowed: {allowed})")]
    FrameCount {
        role: &'static str,
        got: usize,
        allowed: &'static str,
    },

    // --- tensors / model ---
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame size {0}x{1} not divisible by patch size {2}")]
    PatchDivisibility(usize, usize, usize),
    #[error("spatial grid {0}x{0} exceeds positional table capacity {1}x{1}")]
    GridTooLarge(usize, usize),

    // --- config ---
    #[error("unknown config key `{0}`")]
    ConfigKey(String),
    #[error("invalid value for config key `{key}`: {message}")]
    ConfigValue { key: String, message: String },
    #[error("missing required config key `{0}`")]
    ConfigMissing(&'static str),
    #[error("malformed config line {line}: {content}")]
    ConfigLine { line: usize, content: String },

    // --- checkpoints ---
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config digest mismatch: checkpoint written under a different configuration (checkpoint {ckpt}, current {current})")]
    DigestMismatch { ckpt: String, current: String },

    // --- distillation ---
    #[error("non-finite feature vector entering normalization")]
    NonFiniteFeature,

    // --- training ---
    #[error("non-finite loss ({term}) at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },

    // --- datasets / labels ---
    #[error("missing labels.tsv in {0}")]
    LabelsMissing(PathBuf),
    #[error("malformed labels.tsv line {line}: {content}")]
    LabelsLine { line: usize, content: String },
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
