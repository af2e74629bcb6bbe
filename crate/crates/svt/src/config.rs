//! Run configuration: a flat UTF-8 `key = value` file with `#` comments.
//!
//! Every key has a default except `data`; unknown keys are rejected by name
//! so typos can't silently fall back to defaults. A resolved configuration
//! has a canonical text form whose SHA-256 digest identifies the run —
//! checkpoints refuse to resume under a different digest.

use crate::backbone::BackboneConfig;
use crate::distill::{LossToggles, CENTER_MOMENTUM, STUDENT_TEMP};
use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// How training views are drawn from a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Multi-resolution view sets: two globals plus eight locals.
    MultiScale,
    /// Two equal-length clips separated by a random gap; no locals.
    Tis,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::MultiScale => "mc",
            SamplerKind::Tis => "tis",
        }
    }
}

/// Everything a pretraining run needs, resolved from file + defaults.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Directory of `.svtvid` files.
    pub data: PathBuf,
    /// Unique videos per optimizer step (views are expanded per video).
    pub batch_size: usize,
    pub epochs: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay_start: f64,
    pub weight_decay_end: f64,
    pub seed: u64,
    /// Save a checkpoint every this many optimizer steps.
    pub checkpoint_interval: usize,
    pub backbone: BackboneConfig,
    pub student_temp: f64,
    pub center_momentum: f64,
    pub loss: LossToggles,
    pub sampler: SamplerKind,
    /// One augmentation draw per view (true) or per frame (ablation).
    pub tca: bool,
    /// Fuse slow and fast features at evaluation time.
    pub slow_fast: bool,
    /// Square resolution global views are resized to during training.
    pub view_global_size: usize,
    /// Square resolution local views are resized to during training.
    pub view_local_size: usize,
}

impl TrainConfig {
    /// Defaults for every key except `data`, which has none.
    pub fn defaults(data: PathBuf) -> Self {
        Self {
            data,
            batch_size: 32,
            epochs: 20,
            base_lr: 5e-4,
            warmup_epochs: 5,
            weight_decay_start: 0.04,
            weight_decay_end: 0.1,
            seed: 0,
            checkpoint_interval: 100,
            backbone: BackboneConfig::desk(),
            student_temp: STUDENT_TEMP,
            center_momentum: CENTER_MOMENTUM,
            loss: LossToggles::default(),
            sampler: SamplerKind::MultiScale,
            tca: true,
            slow_fast: true,
            view_global_size: crate::views::GLOBAL_SIZE,
            view_local_size: crate::views::LOCAL_SIZE,
        }
    }

    /// Parse a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parse config text. Lines are `key = value`; `#` starts a comment
    /// (full-line or trailing); blank lines are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::defaults(PathBuf::new());
        let mut have_data = false;
        let mut seen: HashSet<String> = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::ConfigLine { line: line_no, content: raw.trim().to_string() });
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::ConfigLine { line: line_no, content: raw.trim().to_string() });
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigValue {
                    key: key.to_string(),
                    message: format!("duplicate assignment on line {line_no}"),
                });
            }
            match key {
                "data" => {
                    cfg.data = PathBuf::from(value);
                    have_data = true;
                }
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "epochs" => cfg.epochs = parse_num(key, value)?,
                "base_lr" => cfg.base_lr = parse_num(key, value)?,
                "warmup_epochs" => cfg.warmup_epochs = parse_num(key, value)?,
                "weight_decay_start" => cfg.weight_decay_start = parse_num(key, value)?,
                "weight_decay_end" => cfg.weight_decay_end = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "checkpoint_interval" => cfg.checkpoint_interval = parse_num(key, value)?,
                "embed_dim" => cfg.backbone.embed_dim = parse_num(key, value)?,
                "n_blocks" => cfg.backbone.n_blocks = parse_num(key, value)?,
                "n_heads" => cfg.backbone.n_heads = parse_num(key, value)?,
                "patch_size" => cfg.backbone.patch_size = parse_num(key, value)?,
                "proj_dim" => cfg.backbone.proj_dim = parse_num(key, value)?,
                "max_spatial_tokens" => cfg.backbone.max_spatial_tokens = parse_num(key, value)?,
                "max_temporal_tokens" => cfg.backbone.max_temporal_tokens = parse_num(key, value)?,
                "student_temp" => cfg.student_temp = parse_num(key, value)?,
                "center_momentum" => cfg.center_momentum = parse_num(key, value)?,
                "loss.gg" => cfg.loss.gg = parse_bool(key, value)?,
                "loss.lg" => cfg.loss.lg = parse_bool(key, value)?,
                "loss.ll" => cfg.loss.ll = parse_bool(key, value)?,
                "loss.gl" => cfg.loss.gl = parse_bool(key, value)?,
                "sampler" => {
                    cfg.sampler = match value {
                        "mc" => SamplerKind::MultiScale,
                        "tis" => SamplerKind::Tis,
                        other => {
                            return Err(Error::ConfigValue {
                                key: key.to_string(),
                                message: format!("expected `mc` or `tis`, got `{other}`"),
                            })
                        }
                    }
                }
                "augment.tca" => cfg.tca = parse_bool(key, value)?,
                "eval.slow_fast" => cfg.slow_fast = parse_bool(key, value)?,
                "view.global_size" => cfg.view_global_size = parse_num(key, value)?,
                "view.local_size" => cfg.view_local_size = parse_num(key, value)?,
                other => return Err(Error::ConfigKey(other.to_string())),
            }
        }
        if !have_data {
            return Err(Error::ConfigMissing("data"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check invariants on a resolved configuration.
    pub fn validate(&self) -> Result<()> {
        fn bad(key: &str, message: impl Into<String>) -> Error {
            Error::ConfigValue { key: key.to_string(), message: message.into() }
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(bad("warmup_epochs", "must be less than epochs"));
        }
        if !(self.base_lr > 0.0) {
            return Err(bad("base_lr", "must be positive"));
        }
        if !(self.weight_decay_start > 0.0) || !(self.weight_decay_end > 0.0) {
            return Err(bad("weight_decay_start", "decay rates must be positive"));
        }
        if self.checkpoint_interval == 0 {
            return Err(bad("checkpoint_interval", "must be at least 1"));
        }
        if !(self.student_temp > 0.0) {
            return Err(bad("student_temp", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.center_momentum) {
            return Err(bad("center_momentum", "must lie in [0, 1]"));
        }
        self.backbone.validate()?;
        for (key, size) in [
            ("view.global_size", self.view_global_size),
            ("view.local_size", self.view_local_size),
        ] {
            if size == 0 || size % self.backbone.patch_size != 0 {
                return Err(bad(
                    key,
                    format!("must be a positive multiple of patch_size {}", self.backbone.patch_size),
                ));
            }
            if size / self.backbone.patch_size > self.backbone.spatial_side() {
                return Err(bad(
                    key,
                    format!(
                        "grid {} exceeds the positional table side {}",
                        size / self.backbone.patch_size,
                        self.backbone.spatial_side()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Canonical text form: every key (sorted) with its resolved value, one
    /// per line. Two configs behave identically iff their canonical forms
    /// match.
    pub fn canonical(&self) -> String {
        let b = &self.backbone;
        let mut s = String::new();
        let _ = write!(
            s,
            "augment.tca={}\nbase_lr={}\nbatch_size={}\ncenter_momentum={}\n\
             checkpoint_interval={}\ndata={}\nembed_dim={}\nepochs={}\n\
             eval.slow_fast={}\nloss.gg={}\nloss.gl={}\nloss.lg={}\nloss.ll={}\n\
             max_spatial_tokens={}\nmax_temporal_tokens={}\nn_blocks={}\nn_heads={}\n\
             patch_size={}\nproj_dim={}\nsampler={}\nseed={}\nstudent_temp={}\n\
             view.global_size={}\nview.local_size={}\n\
             warmup_epochs={}\nweight_decay_end={}\nweight_decay_start={}\n",
            self.tca,
            self.base_lr,
            self.batch_size,
            self.center_momentum,
            self.checkpoint_interval,
            self.data.display(),
            b.embed_dim,
            self.epochs,
            self.slow_fast,
            self.loss.gg,
            self.loss.gl,
            self.loss.lg,
            self.loss.ll,
            b.max_spatial_tokens,
            b.max_temporal_tokens,
            b.n_blocks,
            b.n_heads,
            b.patch_size,
            b.proj_dim,
            self.sampler.as_str(),
            self.seed,
            self.student_temp,
            self.view_global_size,
            self.view_local_size,
            self.warmup_epochs,
            self.weight_decay_end,
            self.weight_decay_start,
        );
        s
    }

    /// SHA-256 of the canonical form, lowercase hex.
    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical())
    }
}

/// SHA-256 of a text, as lowercase hex — the digest function used for all
/// configuration fingerprints.
pub fn sha256_hex(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in hash {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigValue {
        key: key.to_string(),
        message: format!("expected a number, got `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::ConfigValue {
            key: key.to_string(),
            message: format!("expected `true` or `false`, got `{other}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_resolves_to_defaults() {
        let cfg = TrainConfig::parse_str("data = /tmp/videos\n").unwrap();
        assert_eq!(cfg.data, PathBuf::from("/tmp/videos"));
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.base_lr, 5e-4);
        assert_eq!(cfg.warmup_epochs, 5);
        assert_eq!(cfg.weight_decay_start, 0.04);
        assert_eq!(cfg.weight_decay_end, 0.1);
        assert_eq!(cfg.backbone.embed_dim, 64);
        assert!(cfg.loss.gg && cfg.loss.lg && !cfg.loss.ll && !cfg.loss.gl);
        assert_eq!(cfg.sampler, SamplerKind::MultiScale);
        assert!(cfg.tca);
        assert!(cfg.slow_fast);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "\
# full-line comment
data=/d

  batch_size =  4   # trailing comment
sampler = tis
loss.ll = true
augment.tca = false
";
        let cfg = TrainConfig::parse_str(text).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.sampler, SamplerKind::Tis);
        assert!(cfg.loss.ll);
        assert!(!cfg.tca);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = TrainConfig::parse_str("data=/d\nlearning_rate = 0.1\n").unwrap_err();
        match err {
            Error::ConfigKey(k) => assert_eq!(k, "learning_rate"),
            other => panic!("wrong error: {other}"),
        }
        assert!(err_to_string(&TrainConfig::parse_str("data=/d\nlr=1\n").unwrap_err())
            .contains("unknown config key `lr`"));
    }

    fn err_to_string(e: &Error) -> String {
        e.to_string()
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = TrainConfig::parse_str("data=/d\nthis is not a pair\n").unwrap_err();
        match err {
            Error::ConfigLine { line, content } => {
                assert_eq!(line, 2);
                assert_eq!(content, "this is not a pair");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn bad_values_and_duplicates_are_rejected() {
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nbatch_size = many\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nsampler = random\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nloss.gg = yes\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nseed=1\nseed=2\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
    }

    #[test]
    fn missing_data_and_invariant_violations_are_rejected() {
        assert!(matches!(
            TrainConfig::parse_str("batch_size = 4\n").unwrap_err(),
            Error::ConfigMissing("data")
        ));
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nepochs = 5\nwarmup_epochs = 5\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
        assert!(matches!(
            TrainConfig::parse_str("data=/d\nbase_lr = 0\n").unwrap_err(),
            Error::ConfigValue { .. }
        ));
    }

    #[test]
    fn digest_is_stable_and_sensitive_to_fields() {
        let a = TrainConfig::parse_str("data=/d\n").unwrap();
        let b = TrainConfig::parse_str("data=/d\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        assert!(a.digest().chars().all(|c| c.is_ascii_hexdigit()));

        let c = TrainConfig::parse_str("data=/d\nembed_dim = 32\n").unwrap();
        assert_ne!(a.digest(), c.digest());
        let d = TrainConfig::parse_str("data=/d\nloss.ll = true\n").unwrap();
        assert_ne!(a.digest(), d.digest());
    }

    #[test]
    fn canonical_text_reparses_to_the_same_digest() {
        let cfg = TrainConfig::parse_str(
            "data=/tmp/ds\nembed_dim=8\nn_blocks=1\nn_heads=2\nproj_dim=4\n\
             base_lr=0.002\nsampler=tis\nloss.gl=true\nview.local_size=32\n",
        )
        .unwrap();
        let reparsed = TrainConfig::parse_str(&cfg.canonical()).unwrap();
        assert_eq!(reparsed.digest(), cfg.digest());
        assert_eq!(reparsed.canonical(), cfg.canonical());
    }

    #[test]
    fn view_sizes_default_parse_and_validate() {
        let cfg = TrainConfig::parse_str("data=/d\n").unwrap();
        assert_eq!(cfg.view_global_size, 224);
        assert_eq!(cfg.view_local_size, 96);

        let small = TrainConfig::parse_str(
            "data=/d\nview.global_size = 64\nview.local_size = 32\n",
        )
        .unwrap();
        assert_eq!(small.view_global_size, 64);
        assert_eq!(small.view_local_size, 32);
        assert_ne!(small.digest(), cfg.digest());

        // Not a multiple of the patch size.
        assert!(TrainConfig::parse_str("data=/d\nview.global_size = 100\n").is_err());
        // Grid would exceed the positional table.
        assert!(TrainConfig::parse_str("data=/d\nview.global_size = 240\n").is_err());
    }

    #[test]
    fn backbone_keys_flow_through_and_are_validated() {
        let cfg = TrainConfig::parse_str(
            "data=/d\nembed_dim=8\nn_blocks=1\nn_heads=2\nproj_dim=4\n",
        )
        .unwrap();
        assert_eq!(cfg.backbone.embed_dim, 8);
        assert_eq!(cfg.backbone.n_blocks, 1);
        // embed_dim not divisible by heads → backbone validation fails.
        assert!(TrainConfig::parse_str("data=/d\nembed_dim=10\nn_heads=4\n").is_err());
    }
}
