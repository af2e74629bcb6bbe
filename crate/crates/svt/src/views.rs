//! Spatiotemporal view sampling: global clips covering most of the time
//! axis at full spatial frame, local clips covering ~1/8th of the time axis
//! with a ~40%-area spatial crop, all resized to fixed resolutions, plus
//! temporally consistent augmentations and the alternative interval sampler
//! used by the ablation harness.

use crate::error::{Error, Result};
use crate::image;
use crate::rng::ChaChaStream;
use crate::scalar::Scalar;
use crate::videoio::RawVideo;
use ndarray::Array4;
use rand::Rng;

pub const GLOBAL_SIZE: usize = 224;
pub const LOCAL_SIZE: usize = 96;
pub const GLOBAL_FRAME_COUNTS: [usize; 2] = [8, 16];
pub const LOCAL_FRAME_COUNTS: [usize; 4] = [2, 4, 8, 16];
pub const LOCALS_PER_SET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewRole {
    Global,
    Local,
}

impl ViewRole {
    pub fn name(self) -> &'static str {
        match self {
            ViewRole::Global => "global",
            ViewRole::Local => "local",
        }
    }
}

/// Color-jitter factors; 1.0 everywhere is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

/// Parameters of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugParams {
    pub flip: bool,
    pub jitter: Option<JitterParams>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
    pub solarize_threshold: Option<f64>,
}

impl AugParams {
    pub fn identity() -> Self {
        Self {
            flip: false,
            jitter: None,
            grayscale: false,
            blur_sigma: None,
            solarize_threshold: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// What was applied to a view. The standard pipeline draws one parameter set
/// per view and applies it to every frame; the ablation mode that breaks
/// temporal consistency draws per frame.
#[derive(Debug, Clone, PartialEq)]
pub enum AugRecord {
    Uniform(AugParams),
    PerFrame(Vec<AugParams>),
}

impl AugRecord {
    pub fn identity() -> Self {
        AugRecord::Uniform(AugParams::identity())
    }
}

/// One sampled clip: float frames in [0,1], plus full provenance (which
/// source frames, which spatial crop, which augmentations).
#[derive(Debug, Clone)]
pub struct View<T: Scalar> {
    pub frames: Array4<T>,
    pub source_indices: Vec<usize>,
    pub role: ViewRole,
    /// (top, left, crop_h, crop_w) in source pixels.
    pub spatial_window: (usize, usize, usize, usize),
    pub aug_record: AugRecord,
}

impl<T: Scalar> View<T> {
    pub fn t(&self) -> usize {
        self.frames.dim().0
    }
}

/// The per-video training view set: two globals at T=8 and T=16, eight locals.
#[derive(Debug, Clone)]
pub struct ViewSet<T: Scalar> {
    pub globals: Vec<View<T>>,
    pub locals: Vec<View<T>>,
}

/// View-sampling policy: augmentation probabilities plus the output
/// resolutions views are resized to. Blur and solarization apply to global
/// views only, regardless of the probabilities stored here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugPolicy {
    pub p_jitter: f64,
    pub p_grayscale: f64,
    pub p_blur: f64,
    pub p_solarize: f64,
    pub p_flip: f64,
    /// One parameter draw per view (true) or per frame (ablation, false).
    pub temporally_consistent: bool,
    /// Square output resolution of global views.
    pub global_size: usize,
    /// Square output resolution of local views.
    pub local_size: usize,
}

impl AugPolicy {
    /// Standard training probabilities at the standard resolutions.
    pub fn standard(flip_allowed: bool) -> Self {
        Self {
            p_jitter: 0.8,
            p_grayscale: 0.2,
            p_blur: 0.1,
            p_solarize: 0.2,
            p_flip: if flip_allowed { 0.5 } else { 0.0 },
            temporally_consistent: true,
            global_size: GLOBAL_SIZE,
            local_size: LOCAL_SIZE,
        }
    }

    /// All probabilities zero: augmentation is the identity.
    pub fn disabled() -> Self {
        Self {
            p_jitter: 0.0,
            p_grayscale: 0.0,
            p_blur: 0.0,
            p_solarize: 0.0,
            p_flip: 0.0,
            temporally_consistent: true,
            global_size: GLOBAL_SIZE,
            local_size: LOCAL_SIZE,
        }
    }
}

/// `count` indices uniformly spaced over a window of `window_len` frames
/// starting at `offset`: floor of the exact linspace positions. Strictly
/// increasing whenever `window_len >= count`.
fn floor_linspace(offset: usize, window_len: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![offset];
    }
    let step = (window_len - 1) as f64 / (count - 1) as f64;
    (0..count)
        .map(|i| offset + (i as f64 * step).floor() as usize)
        .collect()
}

/// Sample a global view: a window covering 90% of the time axis at a random
/// offset, `frame_count` uniformly spaced frames inside it, full spatial
/// frame resized to `out_size`² (224 under the standard policy). No
/// augmentation is applied here.
pub fn sample_global_view<T: Scalar>(
    video: &RawVideo,
    frame_count: usize,
    out_size: usize,
    rng: &mut ChaChaStream,
) -> Result<View<T>> {
    if !GLOBAL_FRAME_COUNTS.contains(&frame_count) {
        return Err(Error::FrameCount {
            role: "global",
            got: frame_count,
            allowed: "{8, 16}",
        });
    }
    let n = video.n_frames();
    if n < frame_count {
        return Err(Error::VideoTooShort {
            len: n,
            needed: frame_count,
        });
    }
    let window_len = ((0.9 * n as f64).floor() as usize)
        .max(frame_count)
        .min(n);
    let offset = rng.random_range(0..=n - window_len);
    let indices = floor_linspace(offset, window_len, frame_count);
    let frames = image::resize_frames(
        image::gather_frames::<T>(video, &indices).view(),
        out_size,
        out_size,
    );
    Ok(View {
        frames,
        source_indices: indices,
        role: ViewRole::Global,
        spatial_window: (0, 0, video.height(), video.width()),
        aug_record: AugRecord::identity(),
    })
}

/// Sample a local view: a temporal window of length max(ceil(N/8),
/// frame_count), a random spatial crop with area fraction uniform in
/// [0.3, 0.5] and aspect uniform in [3/4, 4/3], resized to `out_size`²
/// (96 under the standard policy).
pub fn sample_local_view<T: Scalar>(
    video: &RawVideo,
    frame_count: usize,
    out_size: usize,
    rng: &mut ChaChaStream,
) -> Result<View<T>> {
    if !LOCAL_FRAME_COUNTS.contains(&frame_count) {
        return Err(Error::FrameCount {
            role: "local",
            got: frame_count,
            allowed: "{2, 4, 8, 16}",
        });
    }
    let n = video.n_frames();
    if n < frame_count {
        return Err(Error::VideoTooShort {
            len: n,
            needed: frame_count,
        });
    }
    let window_len = n.div_ceil(8).max(frame_count).min(n);
    let offset = rng.random_range(0..=n - window_len);
    let indices = floor_linspace(offset, window_len, frame_count);

    let (h, w) = (video.height(), video.width());
    let area_ratio: f64 = 0.3 + rng.random::<f64>() * 0.2;
    let aspect: f64 = 0.75 + rng.random::<f64>() * (4.0 / 3.0 - 0.75);
    let target_area = area_ratio * (h * w) as f64;
    let crop_w = ((target_area * aspect).sqrt().round() as usize).clamp(1, w);
    let crop_h = ((target_area / aspect).sqrt().round() as usize).clamp(1, h);
    let top = rng.random_range(0..=h - crop_h);
    let left = rng.random_range(0..=w - crop_w);

    let gathered = image::gather_frames::<T>(video, &indices);
    let cropped = image::crop_frames(gathered.view(), top, left, crop_h, crop_w);
    let frames = image::resize_frames(cropped.view(), out_size, out_size);
    Ok(View {
        frames,
        source_indices: indices,
        role: ViewRole::Local,
        spatial_window: (top, left, crop_h, crop_w),
        aug_record: AugRecord::identity(),
    })
}

/// Sample the full training view set for one video: globals at T=8 and T=16
/// plus eight locals with frame counts drawn uniformly from {2,4,8,16},
/// every view independently augmented under `policy`.
pub fn sample_view_set<T: Scalar>(
    video: &RawVideo,
    rng: &mut ChaChaStream,
    policy: &AugPolicy,
) -> Result<ViewSet<T>> {
    let n = video.n_frames();
    if n < 16 {
        return Err(Error::VideoTooShort { len: n, needed: 16 });
    }
    let mut globals = Vec::with_capacity(2);
    for frame_count in GLOBAL_FRAME_COUNTS {
        let view = sample_global_view(video, frame_count, policy.global_size, rng)?;
        globals.push(apply_augmentations_with(view, rng, policy));
    }
    let mut locals = Vec::with_capacity(LOCALS_PER_SET);
    for _ in 0..LOCALS_PER_SET {
        let frame_count = LOCAL_FRAME_COUNTS[rng.random_range(0..LOCAL_FRAME_COUNTS.len())];
        let view = sample_local_view(video, frame_count, policy.local_size, rng)?;
        locals.push(apply_augmentations_with(view, rng, policy));
    }
    Ok(ViewSet { globals, locals })
}

/// Two ordered clips for the interval-sampling ablation: both of
/// `frame_count` consecutive frames, the second starting after the first
/// ends, separated by a gap drawn from a truncated geometric distribution
/// (parameter 0.05) — short gaps are most likely, long gaps decreasingly so.
pub fn sample_tis_views<T: Scalar>(
    video: &RawVideo,
    frame_count: usize,
    rng: &mut ChaChaStream,
) -> Result<(View<T>, View<T>)> {
    if !GLOBAL_FRAME_COUNTS.contains(&frame_count) {
        return Err(Error::FrameCount {
            role: "global",
            got: frame_count,
            allowed: "{8, 16}",
        });
    }
    let n = video.n_frames();
    if n < 2 * frame_count {
        return Err(Error::VideoTooShort {
            len: n,
            needed: 2 * frame_count,
        });
    }
    let max_gap = n - 2 * frame_count;
    let gap = sample_truncated_geometric(rng, 0.05, max_gap);
    let start1 = rng.random_range(0..=n - 2 * frame_count - gap);
    let start2 = start1 + frame_count + gap;

    let clip = |video: &RawVideo, start: usize| -> View<T> {
        let indices: Vec<usize> = (start..start + frame_count).collect();
        let frames = image::resize_frames(
            image::gather_frames::<T>(video, &indices).view(),
            GLOBAL_SIZE,
            GLOBAL_SIZE,
        );
        View {
            frames,
            source_indices: indices,
            role: ViewRole::Global,
            spatial_window: (0, 0, video.height(), video.width()),
            aug_record: AugRecord::identity(),
        }
    };
    Ok((clip(video, start1), clip(video, start2)))
}

/// Geometric distribution with success probability `p`, truncated to
/// [0, max_value]: P(g) ∝ (1-p)^g. Sampled by CDF inversion.
fn sample_truncated_geometric(rng: &mut ChaChaStream, p: f64, max_value: usize) -> usize {
    if max_value == 0 {
        return 0;
    }
    let q = 1.0 - p;
    let tail = q.powi(max_value as i32 + 1);
    let u: f64 = rng.random();
    let g = ((1.0 - u * (1.0 - tail)).ln() / q.ln()).floor() as usize;
    g.min(max_value)
}

/// Augment with the standard policy (public single-view entry point).
pub fn apply_augmentations<T: Scalar>(
    view: View<T>,
    rng: &mut ChaChaStream,
    flip_allowed: bool,
) -> View<T> {
    apply_augmentations_with(view, rng, &AugPolicy::standard(flip_allowed))
}

/// Augment under an explicit policy. Draws the parameters (one set per view,
/// or per frame when temporal consistency is disabled), applies them, clamps
/// to [0,1], and stores the record on the returned view.
pub fn apply_augmentations_with<T: Scalar>(
    mut view: View<T>,
    rng: &mut ChaChaStream,
    policy: &AugPolicy,
) -> View<T> {
    let role = view.role;
    if policy.temporally_consistent {
        let params = draw_params(rng, policy, role);
        apply_params(&mut view.frames, &params);
        view.aug_record = AugRecord::Uniform(params);
    } else {
        let t = view.frames.dim().0;
        let all: Vec<AugParams> = (0..t).map(|_| draw_params(rng, policy, role)).collect();
        for (ti, params) in all.iter().enumerate() {
            let mut frame = view
                .frames
                .slice_mut(ndarray::s![ti..ti + 1, .., .., ..])
                .to_owned();
            apply_params(&mut frame, params);
            view.frames
                .slice_mut(ndarray::s![ti..ti + 1, .., .., ..])
                .assign(&frame);
        }
        view.aug_record = AugRecord::PerFrame(all);
    }
    view
}

/// Re-apply a recorded augmentation to raw frames. Replaying the record of
/// an augmented view onto its pre-augmentation frames reproduces the
/// augmented frames bit for bit.
pub fn replay_augmentations<T: Scalar>(frames: &Array4<T>, record: &AugRecord) -> Array4<T> {
    match record {
        AugRecord::Uniform(params) => {
            let mut out = frames.clone();
            apply_params(&mut out, params);
            out
        }
        AugRecord::PerFrame(all) => {
            let mut out = frames.clone();
            for (ti, params) in all.iter().enumerate() {
                let mut frame = out.slice(ndarray::s![ti..ti + 1, .., .., ..]).to_owned();
                apply_params(&mut frame, params);
                out.slice_mut(ndarray::s![ti..ti + 1, .., .., ..]).assign(&frame);
            }
            out
        }
    }
}

fn draw_params(rng: &mut ChaChaStream, policy: &AugPolicy, role: ViewRole) -> AugParams {
    let flip = rng.random::<f64>() < policy.p_flip;
    let jitter = if rng.random::<f64>() < policy.p_jitter {
        Some(JitterParams {
            brightness: 0.6 + rng.random::<f64>() * 0.8,
            contrast: 0.6 + rng.random::<f64>() * 0.8,
            saturation: 0.8 + rng.random::<f64>() * 0.4,
        })
    } else {
        None
    };
    let grayscale = rng.random::<f64>() < policy.p_grayscale;
    // Blur and solarization are reserved for global views.
    let blur_sigma = if role == ViewRole::Global && rng.random::<f64>() < policy.p_blur {
        Some(0.1 + rng.random::<f64>() * 1.9)
    } else {
        None
    };
    let solarize_threshold = if role == ViewRole::Global && rng.random::<f64>() < policy.p_solarize
    {
        Some(0.5)
    } else {
        None
    };
    AugParams {
        flip,
        jitter,
        grayscale,
        blur_sigma,
        solarize_threshold,
    }
}

/// Apply one parameter set to all given frames, in a fixed transform order,
/// clamping to [0,1] at the end. Identity parameters leave frames untouched
/// (bit-exact: no clamping pass runs for an identity draw).
fn apply_params<T: Scalar>(frames: &mut Array4<T>, params: &AugParams) {
    if params.is_identity() {
        return;
    }
    if params.flip {
        *frames = image::hflip(frames);
    }
    if let Some(j) = params.jitter {
        image::adjust_brightness(frames, j.brightness);
        image::adjust_contrast(frames, j.contrast);
        image::adjust_saturation(frames, j.saturation);
    }
    if params.grayscale {
        image::to_grayscale(frames);
    }
    if let Some(sigma) = params.blur_sigma {
        image::gaussian_blur(frames, sigma);
    }
    if let Some(thr) = params.solarize_threshold {
        image::solarize(frames, thr);
    }
    image::clamp_unit(frames);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, purpose};
    use crate::videoio::{generate_synthetic_video, BackgroundStyle, MotionClass, SyntheticSpec};
    use ndarray::Array4;

    fn test_video(n: usize, h: usize, w: usize, seed: u64) -> RawVideo {
        let spec = SyntheticSpec {
            motion_class: MotionClass::MoveRight,
            n_frames: n,
            height: h,
            width: w,
            object_size: (h / 6).max(1),
            speed: ((w / 4) as f64) / n as f64,
            background_style: BackgroundStyle::Gradient,
            seed,
        };
        generate_synthetic_video(&spec).unwrap().0
    }

    /// Video whose every pixel in frame t equals t, so any spatial crop and
    /// resize of frame t is exactly t/255: views reveal their source frames.
    fn index_coded_video(n: usize, h: usize, w: usize) -> RawVideo {
        assert!(n <= 256);
        let frames = Array4::from_shape_fn((n, h, w, 3), |(t, _, _, _)| t as u8);
        RawVideo::new(frames).unwrap()
    }

    fn stream(seed: u64) -> ChaChaStream {
        rng::stream(seed, &[purpose::VIEWS])
    }

    #[test]
    fn global_window_covers_90_percent() {
        let video = test_video(100, 32, 32, 1);
        for seed in 0..50 {
            let mut rng = stream(seed);
            let v = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut rng).unwrap();
            assert_eq!(v.t(), 8);
            assert_eq!(v.frames.dim(), (8, 224, 224, 3));
            let idx = &v.source_indices;
            assert!(idx.windows(2).all(|p| p[1] > p[0]), "not increasing: {idx:?}");
            assert!(*idx.last().unwrap() < 100);
            // window length 90: first index is the offset, last is offset+89
            assert_eq!(idx.last().unwrap() - idx[0], 89);
        }
    }

    #[test]
    fn global_whole_video_when_exact_fit() {
        let video = test_video(16, 32, 32, 2);
        let mut rng = stream(0);
        let v = sample_global_view::<f32>(&video, 16, GLOBAL_SIZE, &mut rng).unwrap();
        assert_eq!(v.source_indices, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn global_rejects_bad_frame_count_and_short_video() {
        let video = test_video(16, 32, 32, 3);
        let mut rng = stream(0);
        let err = sample_global_view::<f32>(&video, 4, GLOBAL_SIZE, &mut rng).unwrap_err();
        assert!(err.to_string().contains("unsupported frame count"), "{err}");
        let short = test_video(12, 32, 32, 4);
        let err = sample_global_view::<f32>(&short, 16, GLOBAL_SIZE, &mut rng).unwrap_err();
        assert!(err.to_string().contains("video too short"), "{err}");
    }

    #[test]
    fn global_sampling_is_deterministic() {
        let video = test_video(64, 32, 32, 5);
        let a = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut stream(7)).unwrap();
        let b = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut stream(7)).unwrap();
        assert_eq!(a.source_indices, b.source_indices);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn local_window_is_eighth_of_time_axis() {
        let video = test_video(128, 32, 32, 6);
        for seed in 0..50 {
            let mut rng = stream(seed);
            let v = sample_local_view::<f32>(&video, 4, LOCAL_SIZE, &mut rng).unwrap();
            assert_eq!(v.frames.dim(), (4, 96, 96, 3));
            let span = v.source_indices.last().unwrap() - v.source_indices[0];
            assert!(span <= 15, "span {span} exceeds window 16");
            let (_, _, ch, cw) = v.spatial_window;
            let frac = (ch * cw) as f64 / (32.0 * 32.0);
            assert!((0.25..=0.55).contains(&frac), "crop fraction {frac}");
        }
    }

    #[test]
    fn local_clamps_window_to_frame_count() {
        let video = test_video(16, 32, 32, 7);
        let mut rng = stream(1);
        let v = sample_local_view::<f32>(&video, 16, LOCAL_SIZE, &mut rng).unwrap();
        assert_eq!(v.source_indices, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn local_crop_area_mean_near_40_percent() {
        let video = test_video(32, 64, 64, 8);
        let mut rng = stream(11);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let v = sample_local_view::<f32>(&video, 2, LOCAL_SIZE, &mut rng).unwrap();
            let (_, _, ch, cw) = v.spatial_window;
            total += (ch * cw) as f64 / (64.0 * 64.0);
        }
        let mean = total / n as f64;
        assert!(
            (0.38..=0.42).contains(&mean),
            "mean crop-area fraction {mean}"
        );
    }

    #[test]
    fn views_read_only_their_source_frames() {
        let video = index_coded_video(64, 224, 224);
        let mut rng = stream(3);
        // Global on a 224x224 source: resize is the identity, so pixels must
        // equal index/255 exactly.
        let g = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut rng).unwrap();
        for (k, frame) in g.frames.outer_iter().enumerate() {
            let expected = g.source_indices[k] as f32 / 255.0;
            for &v in frame.iter() {
                assert_eq!(v, expected, "global frame {k}");
            }
        }
        // Local: crop+resize of a constant frame stays constant up to float
        // rounding in the interpolation weights.
        let small = index_coded_video(64, 64, 64);
        let l = sample_local_view::<f32>(&small, 4, LOCAL_SIZE, &mut rng).unwrap();
        for (k, frame) in l.frames.outer_iter().enumerate() {
            let expected = l.source_indices[k] as f32 / 255.0;
            for &v in frame.iter() {
                assert!((v - expected).abs() < 1e-6, "local frame {k}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn view_set_has_two_globals_and_eight_locals() {
        let video = test_video(40, 32, 32, 9);
        let policy = AugPolicy::standard(false);
        let set = sample_view_set::<f32>(&video, &mut stream(5), &policy).unwrap();
        assert_eq!(set.globals.len(), 2);
        assert_eq!(set.locals.len(), 8);
        assert_eq!(set.globals[0].t(), 8);
        assert_eq!(set.globals[1].t(), 16);
        for l in &set.locals {
            assert!(LOCAL_FRAME_COUNTS.contains(&l.t()));
            assert_eq!(l.frames.dim().1, 96);
        }
        let again = sample_view_set::<f32>(&video, &mut stream(5), &policy).unwrap();
        for (a, b) in set.locals.iter().zip(again.locals.iter()) {
            assert_eq!(a.source_indices, b.source_indices);
            assert_eq!(a.frames, b.frames);
        }
    }

    #[test]
    fn disabled_policy_is_bit_exact_identity() {
        let video = test_video(32, 32, 32, 10);
        let mut rng = stream(6);
        let raw = sample_local_view::<f32>(&video, 4, LOCAL_SIZE, &mut rng).unwrap();
        let frames_before = raw.frames.clone();
        let out = apply_augmentations_with(raw, &mut rng, &AugPolicy::disabled());
        assert_eq!(out.frames, frames_before);
        assert_eq!(out.aug_record, AugRecord::identity());
    }

    #[test]
    fn forced_grayscale_equalizes_channels() {
        let video = test_video(32, 32, 32, 11);
        let mut rng = stream(7);
        let raw = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut rng).unwrap();
        let mut policy = AugPolicy::disabled();
        policy.p_grayscale = 1.0;
        let out = apply_augmentations_with(raw, &mut rng, &policy);
        for frame in out.frames.outer_iter() {
            for px in frame.rows() {
                assert_eq!(px[0], px[1]);
                assert_eq!(px[1], px[2]);
            }
        }
    }

    #[test]
    fn aug_record_replays_bit_exactly() {
        let video = test_video(32, 48, 48, 12);
        for seed in 0..20 {
            let mut rng = stream(100 + seed);
            let raw = sample_global_view::<f32>(&video, 8, GLOBAL_SIZE, &mut rng).unwrap();
            let raw_frames = raw.frames.clone();
            let out = apply_augmentations(raw, &mut rng, true);
            let replayed = replay_augmentations(&raw_frames, &out.aug_record);
            assert_eq!(out.frames, replayed, "seed {seed}");
            if let AugRecord::Uniform(_) = out.aug_record {
            } else {
                panic!("standard policy must record one parameter set per view");
            }
        }
    }

    #[test]
    fn per_frame_mode_records_one_param_set_per_frame() {
        let video = test_video(32, 32, 32, 13);
        let mut rng = stream(8);
        let raw = sample_local_view::<f32>(&video, 8, LOCAL_SIZE, &mut rng).unwrap();
        let mut policy = AugPolicy::standard(false);
        policy.temporally_consistent = false;
        let out = apply_augmentations_with(raw, &mut rng, &policy);
        match &out.aug_record {
            AugRecord::PerFrame(all) => assert_eq!(all.len(), 8),
            other => panic!("expected per-frame record, got {other:?}"),
        }
    }

    #[test]
    fn tis_clips_are_ordered_and_gaps_skew_short() {
        let video = test_video(64, 32, 32, 14);
        let mut gap_total = 0usize;
        let n = 100;
        for seed in 0..n {
            let mut rng = stream(200 + seed);
            let (a, b) = sample_tis_views::<f32>(&video, 16, &mut rng).unwrap();
            assert_eq!(a.t(), 16);
            assert_eq!(b.t(), 16);
            assert!(a.source_indices.windows(2).all(|p| p[1] == p[0] + 1));
            assert!(b.source_indices.windows(2).all(|p| p[1] == p[0] + 1));
            let end_a = *a.source_indices.last().unwrap();
            let start_b = b.source_indices[0];
            assert!(start_b > end_a, "clip 2 must start after clip 1 ends");
            assert!(*b.source_indices.last().unwrap() < 64);
            gap_total += start_b - end_a - 1;
        }
        // Geometric(0.05) truncated to [0, 32] has mean ~13; the untruncated
        // uniform alternative would give ~16 of max 32. A loose upper bound
        // rules out anything close to uniform on a larger support.
        let mean = gap_total as f64 / n as f64;
        assert!(mean < 18.0, "mean gap {mean} too large for geometric(0.05)");
    }

    #[test]
    fn tis_gap_histogram_is_non_increasing() {
        let mut rng = stream(16);
        let max_gap: usize = 168;
        let n_bins = 8;
        let bin_width = (max_gap + 1).div_ceil(n_bins);
        let mut bins = vec![0usize; n_bins];
        for _ in 0..20_000 {
            let gap = sample_truncated_geometric(&mut rng, 0.05, max_gap);
            bins[gap / bin_width] += 1;
        }
        // Each successive ~22-wide bin should shrink by roughly 0.95^22 ≈ 0.32.
        for pair in bins.windows(2) {
            assert!(
                pair[0] >= pair[1],
                "gap histogram must be non-increasing: {bins:?}"
            );
        }
        assert!(bins[0] > bins[1] * 2, "first bin should dominate: {bins:?}");
    }

    #[test]
    fn truncated_geometric_stays_in_support() {
        let mut rng = stream(17);
        for _ in 0..10_000 {
            let g = sample_truncated_geometric(&mut rng, 0.05, 12);
            assert!(g <= 12);
        }
        for _ in 0..100 {
            assert_eq!(sample_truncated_geometric(&mut rng, 0.05, 0), 0);
        }
    }
}
