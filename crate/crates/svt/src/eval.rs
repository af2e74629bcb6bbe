//! Downstream evaluation: frozen-backbone feature extraction, slow–fast
//! inference with deterministic sum fusion, three-crop test aggregation,
//! linear probing, and the fine-tune learning-rate schedule.
//!
//! Everything here is deterministic: feature extraction is a pure function
//! of parameters and pixels, and probe training draws its only randomness
//! (the per-epoch shuffle) from a seeded stream.

use crate::backbone::{forward, BackboneConfig, ModelParams};
use crate::image::{crop_frames, gather_frames, resize_frames};
use crate::rng::{purpose, stream};
use crate::scalar::Scalar;
use crate::videoio::RawVideo;
use crate::{Error, Result};
use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use std::path::Path;

/// Read a dataset's `labels.tsv`: one `filename<TAB>class-index` row per
/// line, returned in file order. Blank lines are skipped.
pub fn read_labels(dir: &Path) -> Result<Vec<(String, usize)>> {
    let path = dir.join("labels.tsv");
    if !path.is_file() {
        return Err(Error::LabelsMissing(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line.split_once('\t').and_then(|(name, class)| {
            class.trim().parse::<usize>().ok().map(|c| (name.to_string(), c))
        });
        match parsed {
            Some(row) if !row.0.is_empty() => rows.push(row),
            _ => {
                return Err(Error::LabelsLine { line: idx + 1, content: line.to_string() });
            }
        }
    }
    Ok(rows)
}

/// The two inference clip shapes and the number of spatial test crops.
///
/// The slow clip trades temporal for spatial resolution, the fast clip the
/// reverse; both pass through the same network and their classification
/// tokens are fused by elementwise sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlowFastSpec {
    /// (frames, height, width) of the slow clip.
    pub slow: (usize, usize, usize),
    /// (frames, height, width) of the fast clip.
    pub fast: (usize, usize, usize),
    /// Spatial crops per clip shape at test time.
    pub crops_per_clip: usize,
}

impl Default for SlowFastSpec {
    fn default() -> Self {
        Self { slow: (8, 224, 224), fast: (64, 96, 96), crops_per_clip: 3 }
    }
}

/// `t` frame indices covering `0..n_frames` uniformly: index `i` maps to
/// `floor(i·n/t)`. When `t > n_frames`, indices repeat (each frame is held
/// for roughly `t/n` samples), so short videos extend by frame repetition.
pub fn uniform_indices(n_frames: usize, t: usize) -> Vec<usize> {
    (0..t).map(|i| (i * n_frames / t).min(n_frames - 1)).collect()
}

/// Uniformly sample `t` frames, optionally crop a square window, and
/// bilinearly resize to `out_size`². Pixels come out in [0, 1].
fn sampled_clip<T: Scalar>(
    video: &RawVideo,
    t: usize,
    out_size: usize,
    window: Option<(usize, usize, usize)>,
) -> Array4<T> {
    let indices = uniform_indices(video.n_frames(), t);
    let gathered = gather_frames::<T>(video, &indices);
    let cropped = match window {
        Some((top, left, side)) => crop_frames(gathered.view(), top, left, side, side),
        None => gathered,
    };
    resize_frames(cropped.view(), out_size, out_size)
}

/// The frozen-backbone feature of one clip: the final-layer classification
/// token (length `embed_dim`). The projection head is deliberately not
/// applied — probing measures the backbone representation.
pub fn extract_feature<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    frames: ndarray::ArrayView4<T>,
) -> Result<Array1<T>> {
    Ok(forward(params, config, frames)?.cls_backbone)
}

/// Elementwise sum of two feature vectors — the slow-fast fusion operator.
/// Commutative, and the zero vector is its identity.
pub fn fuse_features<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> Array1<T> {
    assert_eq!(a.len(), b.len(), "fusing features of different lengths");
    a + b
}

/// Feature of one uniformly sampled full-frame clip: `t` frames over the
/// whole duration, resized to `out_size`². Clips longer than the video
/// repeat frames.
pub fn clip_feature<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    video: &RawVideo,
    t: usize,
    out_size: usize,
) -> Result<Array1<T>> {
    let clip = sampled_clip::<T>(video, t, out_size, None);
    extract_feature(params, config, clip.view())
}

/// Slow-fast feature of a whole video: sample the slow and fast clips
/// uniformly over the full duration (full frame, resized), extract both
/// classification tokens through the same parameters, and fuse by sum.
/// Clips longer than the video repeat frames; videos shorter than the slow
/// clip's frame count are rejected.
pub fn slow_fast_features<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    video: &RawVideo,
    spec: &SlowFastSpec,
) -> Result<Array1<T>> {
    if video.n_frames() < spec.slow.0 {
        return Err(Error::VideoTooShort { len: video.n_frames(), needed: spec.slow.0 });
    }
    let f_slow = clip_feature(params, config, video, spec.slow.0, spec.slow.1)?;
    let f_fast = clip_feature(params, config, video, spec.fast.0, spec.fast.1)?;
    Ok(fuse_features(&f_slow, &f_fast))
}

/// The three square test windows of an H×W frame: side `min(H, W)`, placed
/// at the start, center, and end of the longer axis (all identical for a
/// square frame). Returns `(top, left, side)` triples.
pub fn three_crop_windows(h: usize, w: usize) -> [(usize, usize, usize); 3] {
    let side = h.min(w);
    if h >= w {
        let span = h - side;
        [(0, 0, side), (span / 2, 0, side), (span, 0, side)]
    } else {
        let span = w - side;
        [(0, 0, side), (0, span / 2, side), (0, span, side)]
    }
}

/// A trained linear classifier over feature vectors.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// Row-major (n_classes × dim).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
    pub n_classes: usize,
}

impl LinearClassifier {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self { weights: vec![0.0; n_classes * dim], bias: vec![0.0; n_classes], dim, n_classes }
    }

    /// Raw class scores `Wx + b`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "feature length mismatch");
        (0..self.n_classes)
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[k]
            })
            .collect()
    }

    /// Argmax class (lowest index wins ties).
    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.scores(x);
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        best
    }

    /// Top-1 accuracy over labeled features.
    pub fn accuracy(&self, data: &[(Vec<f64>, usize)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data.iter().filter(|(x, y)| self.predict(x) == *y).count();
        hits as f64 / data.len() as f64
    }
}

/// Linear-probe training settings.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    /// Initial learning rate, cosine-decayed to zero over the epochs.
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub n_classes: usize,
    /// Seeds the per-epoch shuffle stream.
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(n_classes: usize) -> Self {
        Self { lr: 8e-3, momentum: 0.9, epochs: 100, n_classes, seed: 0 }
    }
}

/// Train a single linear layer on frozen features with momentum SGD under
/// a cosine-decayed learning rate, then score it on the held-out set.
/// Returns the classifier and its held-out top-1 accuracy.
pub fn linear_probe(
    train: &[(Vec<f64>, usize)],
    heldout: &[(Vec<f64>, usize)],
    cfg: &ProbeConfig,
) -> Result<(LinearClassifier, f64)> {
    if !(cfg.lr > 0.0) || !(cfg.momentum >= 0.0 && cfg.momentum < 1.0) || cfg.epochs == 0 {
        return Err(Error::Dataset(
            "probe config needs lr > 0, momentum in [0, 1), and at least one epoch".into(),
        ));
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Dataset("empty probe training set".into()))?;
    let dim = first.0.len();
    for (x, y) in train.iter().chain(heldout) {
        if x.len() != dim {
            return Err(Error::Dataset(format!(
                "inconsistent feature length: {} vs {dim}",
                x.len()
            )));
        }
        if *y >= cfg.n_classes {
            return Err(Error::Dataset(format!(
                "label {y} out of range for {} classes",
                cfg.n_classes
            )));
        }
    }
    if train.iter().all(|(_, y)| *y == train[0].1) {
        return Err(Error::Dataset("degenerate single-class training set".into()));
    }

    let mut clf = LinearClassifier::zeros(dim, cfg.n_classes);
    let mut vel_w = vec![0.0; cfg.n_classes * dim];
    let mut vel_b = vec![0.0; cfg.n_classes];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let t = epoch as f64 / cfg.epochs as f64;
        let lr = cfg.lr * ((std::f64::consts::PI * t).cos() + 1.0) / 2.0;
        let mut rng = stream(cfg.seed, &[purpose::PROBE, epoch as u64]);
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &train[i];
            let scores = clf.scores(x);
            // Max-subtracted softmax keeps the exponentials bounded.
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for k in 0..cfg.n_classes {
                let mut g = exps[k] / z;
                if k == *y {
                    g -= 1.0;
                }
                vel_b[k] = cfg.momentum * vel_b[k] + g;
                clf.bias[k] -= lr * vel_b[k];
                let wrow = &mut clf.weights[k * dim..(k + 1) * dim];
                let vrow = &mut vel_w[k * dim..(k + 1) * dim];
                for j in 0..dim {
                    vrow[j] = cfg.momentum * vrow[j] + g * x[j];
                    wrow[j] -= lr * vrow[j];
                }
            }
        }
    }
    let acc = clf.accuracy(heldout);
    Ok((clf, acc))
}

/// Average the classifier's scores over the three spatial test crops, each
/// evaluated through the slow-fast pipeline. Returns one score per class.
pub fn predict_multicrop<T: Scalar>(
    params: &ModelParams<T>,
    config: &BackboneConfig,
    classifier: &LinearClassifier,
    video: &RawVideo,
    spec: &SlowFastSpec,
) -> Result<Vec<f64>> {
    if video.n_frames() < spec.slow.0 {
        return Err(Error::VideoTooShort { len: video.n_frames(), needed: spec.slow.0 });
    }
    let windows = three_crop_windows(video.height(), video.width());
    let mut sum = vec![0.0; classifier.n_classes];
    for &win in windows.iter().take(spec.crops_per_clip) {
        let slow = sampled_clip::<T>(video, spec.slow.0, spec.slow.1, Some(win));
        let fast = sampled_clip::<T>(video, spec.fast.0, spec.fast.1, Some(win));
        let f_slow = extract_feature(params, config, slow.view())?;
        let f_fast = extract_feature(params, config, fast.view())?;
        let fused = fuse_features(&f_slow, &f_fast);
        let feat: Vec<f64> = fused.iter().map(|v| v.to_f64()).collect();
        for (acc, s) in sum.iter_mut().zip(classifier.scores(&feat)) {
            *acc += s;
        }
    }
    let n = spec.crops_per_clip as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Momentum used by the fine-tune protocol.
pub const FINETUNE_MOMENTUM: f64 = 0.9;
/// Weight decay used by the fine-tune protocol.
pub const FINETUNE_WEIGHT_DECAY: f64 = 1e-4;

/// Learning rate of the 15-epoch fine-tune protocol: 5e-3 through epoch 10,
/// then a tenth of that through epoch 13, then another tenth. `epoch` is
/// 1-based; values past 15 stay at the final rate.
pub fn finetune_schedule(epoch: usize) -> f64 {
    match epoch {
        0..=10 => 5e-3,
        11..=13 => 5e-4,
        _ => 5e-5,
    }
}
