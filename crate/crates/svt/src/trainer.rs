//! Pretraining loop: batching, learning-rate/weight-decay schedules, the
//! adaptive-moment optimizer, checkpointing, and metrics.
//!
//! Determinism contract: given the same config (and therefore the same
//! digest), two runs produce bit-identical parameters and metrics streams
//! (wall-clock excluded), and a run interrupted by save/resume reproduces
//! the uninterrupted stream. All randomness is drawn from per-purpose
//! streams keyed by (seed, epoch, video index), so nothing depends on
//! wall-clock, thread timing, or filesystem iteration order.

use crate::backbone::{tensor_decays, BackboneConfig, ModelParams};
use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainSnapshot};
use crate::config::{SamplerKind, TrainConfig};
use crate::distill::{
    center_update, distill_step_grads, ema_momentum_at, ema_update, teacher_temp_at,
    DistillState, LossToggles,
};
use crate::rng::{purpose, stream};
use crate::videoio::read_raw_video;
use crate::views::{
    sample_tis_views, sample_view_set, AugPolicy, ViewSet, GLOBAL_FRAME_COUNTS,
};
use crate::{Error, Result};
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f32 = 1e-8;
/// Gradients are rescaled so their global L2 norm never exceeds this.
pub const GRAD_CLIP: f64 = 3.0;

/// Learning-rate and weight-decay schedules, resolved to step counts.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub base_lr: f64,
    pub wd_start: f64,
    pub wd_end: f64,
}

impl Schedule {
    pub fn from_config(config: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            total_steps: config.epochs * steps_per_epoch,
            warmup_steps: config.warmup_epochs * steps_per_epoch,
            base_lr: config.base_lr,
            wd_start: config.weight_decay_start,
            wd_end: config.weight_decay_end,
        }
    }

    /// Linear ramp 0 → base over the warmup, then cosine decay base → 0.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.base_lr * step as f64 / self.warmup_steps as f64
        } else {
            let remaining = (self.total_steps - self.warmup_steps).max(1);
            let t = (step - self.warmup_steps) as f64 / remaining as f64;
            self.base_lr * ((std::f64::consts::PI * t.min(1.0)).cos() + 1.0) / 2.0
        }
    }

    /// Cosine ramp from `wd_start` at step 0 to `wd_end` at the final step.
    pub fn wd_at(&self, step: usize) -> f64 {
        let t = (step as f64 / self.total_steps.max(1) as f64).min(1.0);
        let w = ((std::f64::consts::PI * t).cos() + 1.0) / 2.0;
        self.wd_end + (self.wd_start - self.wd_end) * w
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Zero-based index of the optimizer step this record describes.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_momentum: f64,
    /// Batch-mean global↔global loss.
    pub l_gg: f64,
    /// Batch-mean local→global loss.
    pub l_lg: f64,
    /// Batch-mean total loss.
    pub total: f64,
    /// Mean over dimensions of the per-dimension standard deviation of raw
    /// teacher outputs across the batch (collapse indicator).
    pub teacher_std: f64,
    /// Wall-clock duration of the step; excluded from determinism
    /// comparisons.
    pub wall_ms: f64,
}

impl MetricsRecord {
    /// Equality on every field except `wall_ms`.
    pub fn same_values(&self, other: &Self) -> bool {
        self.step == other.step
            && self.epoch == other.epoch
            && self.lr == other.lr
            && self.weight_decay == other.weight_decay
            && self.ema_momentum == other.ema_momentum
            && self.l_gg == other.l_gg
            && self.l_lg == other.l_lg
            && self.total == other.total
            && self.teacher_std == other.teacher_std
    }
}

/// Rescale gradients in place so their global L2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelParams<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale_by((max_norm / norm) as f32);
    }
    norm
}

/// One adaptive-moment update with decoupled weight decay.
///
/// `step` is the zero-based index of this update (bias correction uses
/// `step + 1`). Weight decay applies only to tensors for which
/// [`tensor_decays`] is true — normalization scales and the class token are
/// excluded.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    m: &mut ModelParams<f32>,
    v: &mut ModelParams<f32>,
    grads: &ModelParams<f32>,
    lr: f64,
    wd: f64,
    step: usize,
) {
    let t = (step + 1) as i32;
    let bc1 = (1.0 - ADAM_BETA1.powi(t)) as f32;
    let bc2 = (1.0 - ADAM_BETA2.powi(t)) as f32;
    let b1 = ADAM_BETA1 as f32;
    let b2 = ADAM_BETA2 as f32;
    let lr32 = lr as f32;
    let wd32 = wd as f32;
    let mut p_entries = params.tensors_mut();
    let mut m_entries = m.tensors_mut();
    let mut v_entries = v.tensors_mut();
    let g_entries = grads.tensors();
    for i in 0..p_entries.len() {
        let decays = tensor_decays(&p_entries[i].name);
        let pt = &mut p_entries[i].data;
        let mt = &mut m_entries[i].data;
        let vt = &mut v_entries[i].data;
        let gt = &g_entries[i].data;
        for j in 0..pt.len() {
            let g = gt[j];
            mt[j] = b1 * mt[j] + (1.0 - b1) * g;
            vt[j] = b2 * vt[j] + (1.0 - b2) * g * g;
            let m_hat = mt[j] / bc1;
            let v_hat = vt[j] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + ADAM_EPS);
            if decays {
                update += wd32 * pt[j];
            }
            pt[j] -= lr32 * update;
        }
    }
}

/// Mean over dimensions of the per-dimension standard deviation across a
/// batch of vectors.
pub fn batch_std(outputs: &[Array1<f32>]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let n = outputs.len() as f64;
    let k = outputs[0].len();
    let mut acc = 0.0;
    for j in 0..k {
        let mean: f64 = outputs.iter().map(|o| o[j] as f64).sum::<f64>() / n;
        let var: f64 = outputs.iter().map(|o| (o[j] as f64 - mean).powi(2)).sum::<f64>() / n;
        acc += var.sqrt();
    }
    acc / k as f64
}

/// The pretraining driver.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub digest: String,
    /// Sorted `.svtvid` paths under `config.data`.
    pub videos: Vec<PathBuf>,
    pub steps_per_epoch: usize,
    pub schedule: Schedule,
    pub student: ModelParams<f32>,
    pub teacher: ModelParams<f32>,
    pub state: DistillState<f32>,
    pub opt_m: ModelParams<f32>,
    pub opt_v: ModelParams<f32>,
    /// Completed optimizer steps.
    pub step: usize,
}

/// Sorted list of `.svtvid` files in a directory.
pub fn list_videos(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut videos: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "svtvid"))
        .collect();
    videos.sort();
    if videos.is_empty() {
        return Err(Error::Dataset(format!(
            "no .svtvid files found in {}",
            dir.display()
        )));
    }
    Ok(videos)
}

impl Trainer {
    /// Fresh run: student initialized from the seed, teacher = student.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest();
        let videos = list_videos(&config.data)?;
        let steps_per_epoch = videos.len().div_ceil(config.batch_size);
        let schedule = Schedule::from_config(&config, steps_per_epoch);
        let student = ModelParams::<f32>::init(&config.backbone, config.seed)?;
        let teacher = student.clone();
        let mut state = DistillState::<f32>::new(config.backbone.proj_dim);
        state.center_momentum = config.center_momentum as f32;
        state.student_temp = config.student_temp as f32;
        let opt_m = ModelParams::zeros(&config.backbone);
        let opt_v = ModelParams::zeros(&config.backbone);
        Ok(Self {
            config,
            digest,
            videos,
            steps_per_epoch,
            schedule,
            student,
            teacher,
            state,
            opt_m,
            opt_v,
            step: 0,
        })
    }

    /// Resume from a checkpoint directory. Refuses to continue if the
    /// checkpoint was written under a different config digest.
    pub fn resume(config: TrainConfig, checkpoint_dir: &Path) -> Result<Self> {
        let snap = load_checkpoint(checkpoint_dir, &config.backbone)?;
        let current = config.digest();
        if snap.config_digest != current {
            return Err(Error::DigestMismatch { ckpt: snap.config_digest, current });
        }
        let mut trainer = Self::new(config)?;
        trainer.student = snap.student;
        trainer.teacher = snap.teacher;
        trainer.state.center = snap.center;
        trainer.opt_m = snap.opt_m;
        trainer.opt_v = snap.opt_v;
        trainer.step = snap.step;
        Ok(trainer)
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.total_steps
    }

    /// Everything needed to resume, cloned out of the trainer.
    pub fn snapshot(&self) -> TrainSnapshot {
        TrainSnapshot {
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            center: self.state.center.clone(),
            opt_m: self.opt_m.clone(),
            opt_v: self.opt_v.clone(),
            step: self.step,
            seed: self.config.seed,
            config_digest: self.digest.clone(),
        }
    }

    /// Deterministic video order for an epoch.
    pub fn batch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.videos.len()).collect();
        let mut rng = stream(self.config.seed, &[purpose::BATCH_ORDER, epoch as u64]);
        order.shuffle(&mut rng);
        order
    }

    /// Sample this video's views for the current epoch.
    fn sample_views(&self, epoch: usize, video_idx: usize) -> Result<ViewSet<f32>> {
        let video = read_raw_video(&self.videos[video_idx])?;
        let mut rng = stream(
            self.config.seed,
            &[purpose::VIEWS, epoch as u64, video_idx as u64],
        );
        match self.config.sampler {
            SamplerKind::MultiScale => {
                let mut policy = AugPolicy::standard(true);
                policy.temporally_consistent = self.config.tca;
                policy.global_size = self.config.view_global_size;
                policy.local_size = self.config.view_local_size;
                sample_view_set(&video, &mut rng, &policy)
            }
            SamplerKind::Tis => {
                let frame_count = GLOBAL_FRAME_COUNTS[rng.random_range(0..2)];
                let (first, second) = sample_tis_views(&video, frame_count, &mut rng)?;
                Ok(ViewSet { globals: vec![first, second], locals: vec![] })
            }
        }
    }

    /// One optimizer step over a batch of dataset indices.
    ///
    /// Per video: sample views, compute the matched loss and its student
    /// gradient; gradients and losses are averaged over the batch; the
    /// student takes one clipped adaptive-moment update; then the teacher
    /// EMA and the center are updated. The teacher is never touched by the
    /// gradient itself.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<MetricsRecord> {
        assert!(!batch.is_empty(), "train_step needs a non-empty batch");
        let started = Instant::now();
        let step = self.step;
        let epoch = step / self.steps_per_epoch;
        let total_steps = self.schedule.total_steps;
        let lr = self.schedule.lr_at(step);
        let wd = self.schedule.wd_at(step);
        let ema_m = ema_momentum_at(step, total_steps);
        let teacher_temp = teacher_temp_at(step as f64 / total_steps as f64) as f32;

        let mut grads = ModelParams::<f32>::zeros(&self.config.backbone);
        let mut teacher_outs: Vec<Array1<f32>> = Vec::new();
        let (mut l_gg, mut l_lg, mut total) = (0.0f64, 0.0f64, 0.0f64);
        for &video_idx in batch {
            let views = self.sample_views(epoch, video_idx)?;
            let out = distill_step_grads(
                &views,
                &self.student,
                &self.teacher,
                &self.config.backbone,
                &self.state,
                teacher_temp,
                &self.config.loss,
            )?;
            grads.add_scaled(&out.grads, 1.0);
            l_gg += out.breakdown.l_gg as f64;
            l_lg += out.breakdown.l_lg as f64;
            total += out.breakdown.total as f64;
            teacher_outs.extend(out.teacher_projections);
        }
        let n = batch.len() as f64;
        grads.scale_by(1.0 / n as f32);
        l_gg /= n;
        l_lg /= n;
        total /= n;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { term: "total", step });
        }

        clip_global_norm(&mut grads, GRAD_CLIP);
        adam_step(
            &mut self.student,
            &mut self.opt_m,
            &mut self.opt_v,
            &grads,
            lr,
            wd,
            step,
        );
        ema_update(&mut self.teacher, &self.student, ema_m as f32);
        center_update(
            &mut self.state.center,
            &teacher_outs,
            self.state.center_momentum,
        );
        let teacher_std = batch_std(&teacher_outs);
        self.step += 1;

        Ok(MetricsRecord {
            step,
            epoch,
            lr,
            weight_decay: wd,
            ema_momentum: ema_m,
            l_gg,
            l_lg,
            total,
            teacher_std,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Train until `total_steps`, appending one JSON line per step to
    /// `metrics.jsonl` in `out_dir` and writing interval plus final
    /// checkpoints. Safe to call on a resumed trainer: completed steps are
    /// skipped and the metrics stream continues where it stopped.
    pub fn run(&mut self, out_dir: &Path) -> Result<Vec<MetricsRecord>> {
        std::fs::create_dir_all(out_dir)?;
        let mut metrics_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join("metrics.jsonl"))?;
        let mut records = Vec::new();
        while self.step < self.schedule.total_steps {
            let epoch = self.step / self.steps_per_epoch;
            let done_in_epoch = self.step % self.steps_per_epoch;
            let order = self.batch_order(epoch);
            for (batch_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
                if batch_idx < done_in_epoch {
                    continue;
                }
                let record = self.train_step(chunk)?;
                let line = serde_json::to_string(&record).expect("serializable metrics");
                writeln!(metrics_file, "{line}")?;
                metrics_file.flush()?;
                records.push(record);
                if self.step % self.config.checkpoint_interval == 0
                    && self.step < self.schedule.total_steps
                {
                    let dir = out_dir.join(format!("checkpoint-{:06}", self.step));
                    self.save_ckpt(&dir)?;
                }
            }
        }
        self.save_ckpt(&out_dir.join("checkpoint-final"))?;
        Ok(records)
    }

    /// Write a checkpoint plus a `config.txt` sidecar holding the canonical
    /// configuration, so downstream commands can reload the model without
    /// being handed the configuration separately.
    pub fn save_ckpt(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.snapshot())?;
        std::fs::write(dir.join("config.txt"), self.config.canonical())?;
        Ok(())
    }
}

/// Optimization sanity harness: fit one fixed batch of view sets against a
/// frozen teacher and return the per-step batch-mean total loss.
///
/// The student starts from `seed`, the teacher is a frozen copy of that
/// initialization (no momentum tracking, no output centering), and every
/// step runs the full loss-and-gradient pipeline over the same views,
/// averages gradients over the batch, clips them to the global-norm cap,
/// and takes one adaptive-moment update at a constant learning rate with
/// zero weight decay. Because the targets never move, a correct gradient
/// and optimizer stack must drive this loss down over a few dozen steps;
/// a flat or rising trajectory indicates a defect.
pub fn fit_fixed_batch(
    config: &BackboneConfig,
    views: &[ViewSet<f32>],
    seed: u64,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    assert!(!views.is_empty(), "fit_fixed_batch needs at least one view set");
    let mut student = ModelParams::<f32>::init(config, seed)?;
    let teacher = student.clone();
    let state = DistillState::<f32>::new(config.proj_dim);
    let mut opt_m = ModelParams::<f32>::zeros(config);
    let mut opt_v = ModelParams::<f32>::zeros(config);
    let toggles = LossToggles::default();
    let teacher_temp = teacher_temp_at(0.0) as f32;
    let mut totals = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut grads = ModelParams::<f32>::zeros(config);
        let mut total = 0.0f64;
        for view_set in views {
            let out = distill_step_grads(
                view_set,
                &student,
                &teacher,
                config,
                &state,
                teacher_temp,
                &toggles,
            )?;
            grads.add_scaled(&out.grads, 1.0);
            total += out.breakdown.total as f64;
        }
        grads.scale_by(1.0 / views.len() as f32);
        total /= views.len() as f64;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { term: "total", step });
        }
        totals.push(total);
        clip_global_norm(&mut grads, GRAD_CLIP);
        adam_step(&mut student, &mut opt_m, &mut opt_v, &grads, lr, 0.0, step);
    }
    Ok(totals)
}
