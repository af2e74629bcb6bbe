//! Teacher–student self-distillation.
//!
//! The student network is trained to match sharpened, centered probability
//! targets produced by a momentum (EMA) teacher from different views of the
//! same video. This module owns:
//!
//! - [`normalize`]: temperature softmax over projection outputs, with an
//!   optional center subtraction (used on the teacher path only);
//! - [`loss_gg`] / [`loss_lg`]: cross-entropy between teacher targets and
//!   student probabilities;
//! - [`route_and_match`]: the full cross-view pairing — each global view is
//!   matched against the *other* global's teacher target, and every local
//!   view is matched against both global targets;
//! - [`distill_step_grads`]: the same routing plus analytic gradients with
//!   respect to every student parameter (the teacher never receives
//!   gradients — it is only ever read here);
//! - [`ema_update`] / [`center_update`]: the teacher parameter and center
//!   state updates applied after each optimizer step;
//! - [`teacher_temp_at`] / [`ema_momentum_at`]: the schedules both follow.

use crate::backbone::{backward, forward, forward_cached, BackboneConfig, ModelParams};
use crate::scalar::Scalar;
use crate::views::ViewSet;
use crate::{Error, Result};
use ndarray::{Array1, ArrayView1, ArrayView4};
use std::fmt;

/// Floor applied inside `ln` when evaluating cross-entropy, so that a
/// student probability of exactly zero yields a large finite loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Student softmax temperature.
pub const STUDENT_TEMP: f64 = 0.1;
/// Teacher temperature at the start of training.
pub const TEACHER_TEMP_START: f64 = 0.04;
/// Teacher temperature after the ramp.
pub const TEACHER_TEMP_END: f64 = 0.07;
/// Fraction of training over which the teacher temperature ramps linearly.
pub const TEACHER_TEMP_WARM_FRAC: f64 = 0.3;
/// Teacher EMA momentum at the start of training (ramps to 1.0 by the end).
pub const EMA_MOMENTUM_BASE: f64 = 0.996;
/// Momentum of the running center of teacher outputs.
pub const CENTER_MOMENTUM: f64 = 0.9;

/// Identifies one view within a [`ViewSet`]: global index 0/1 or local 0..k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewId {
    /// Index into `ViewSet::globals` (0 or 1).
    Global(usize),
    /// Index into `ViewSet::locals`.
    Local(usize),
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewId::Global(i) => write!(f, "g{}", i + 1),
            ViewId::Local(i) => write!(f, "l{}", i + 1),
        }
    }
}

/// Which student→teacher pair families contribute to the loss.
///
/// The default enables global↔global and local→global matching. The other
/// two families exist for ablation runs configured at the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    /// Each global view against the other global's teacher target (2 pairs).
    pub gg: bool,
    /// Every local view against both global teacher targets (2k pairs).
    pub lg: bool,
    /// Every local view against every *other* local's teacher target
    /// (k·(k−1) ordered pairs; never a view against its own target).
    pub ll: bool,
    /// Each global view against every local's teacher target (2k pairs).
    pub gl: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { gg: true, lg: true, ll: false, gl: false }
    }
}

/// Ordered (student, teacher) pairs for a view set with two globals and
/// `n_locals` locals. Family order is gg, lg, ll, gl; within a family,
/// student views ascend and for each student its teachers ascend.
pub fn route_pairs(n_locals: usize, toggles: &LossToggles) -> Vec<(ViewId, ViewId)> {
    let mut pairs = Vec::new();
    if toggles.gg {
        pairs.push((ViewId::Global(0), ViewId::Global(1)));
        pairs.push((ViewId::Global(1), ViewId::Global(0)));
    }
    if toggles.lg {
        for i in 0..n_locals {
            pairs.push((ViewId::Local(i), ViewId::Global(0)));
            pairs.push((ViewId::Local(i), ViewId::Global(1)));
        }
    }
    if toggles.ll {
        for i in 0..n_locals {
            for j in 0..n_locals {
                if i != j {
                    pairs.push((ViewId::Local(i), ViewId::Local(j)));
                }
            }
        }
    }
    if toggles.gl {
        for g in 0..2 {
            for j in 0..n_locals {
                pairs.push((ViewId::Global(g), ViewId::Local(j)));
            }
        }
    }
    pairs
}

/// One matched pair's contribution to the loss.
#[derive(Debug, Clone)]
pub struct PairLoss<T> {
    /// The view whose student probabilities were scored.
    pub student: ViewId,
    /// The view whose teacher target was matched against.
    pub teacher: ViewId,
    /// Cross-entropy for this pair.
    pub value: T,
}

/// Loss of one view set, split by pair family.
///
/// `total` is the sum of the family sums in the fixed order
/// gg + lg + ll + gl, each family itself accumulated in pair order, so it is
/// bit-identical to re-summing `per_pair` in order.
#[derive(Debug, Clone)]
pub struct LossBreakdown<T> {
    pub l_gg: T,
    pub l_lg: T,
    pub l_ll: T,
    pub l_gl: T,
    pub total: T,
    pub per_pair: Vec<PairLoss<T>>,
}

/// Distillation state carried between steps, alongside the teacher
/// parameters (which the trainer owns so they can be checkpointed with
/// everything else).
#[derive(Debug, Clone)]
pub struct DistillState<T: Scalar> {
    /// Running center of raw teacher projections, length `proj_dim`.
    /// Subtracted from teacher outputs before sharpening; never applied on
    /// the student path.
    pub center: Array1<T>,
    /// Momentum of the running center.
    pub center_momentum: T,
    /// Student softmax temperature.
    pub student_temp: T,
}

impl<T: Scalar> DistillState<T> {
    /// Fresh state: zero center, default momenta and temperature.
    pub fn new(proj_dim: usize) -> Self {
        Self {
            center: Array1::from_elem(proj_dim, T::from_f64(0.0)),
            center_momentum: T::from_f64(CENTER_MOMENTUM),
            student_temp: T::from_f64(STUDENT_TEMP),
        }
    }
}

/// Temperature softmax with optional center subtraction:
/// `out[i] = exp((f[i] − c[i]) / temp) / Σ_j exp((f[j] − c[j]) / temp)`.
///
/// Stabilized by subtracting the row maximum before exponentiating, so the
/// result is invariant to adding a constant to every input. Errors if any
/// input entry is non-finite. `temp` must be positive.
pub fn normalize<T: Scalar>(
    features: ArrayView1<T>,
    temp: T,
    center: Option<ArrayView1<T>>,
) -> Result<Array1<T>> {
    if features.is_empty() {
        return Err(Error::ShapeMismatch("normalize: empty feature vector".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature);
    }
    debug_assert!(temp > T::from_f64(0.0), "temperature must be positive");
    let mut logits = features.to_owned();
    if let Some(c) = center {
        debug_assert_eq!(c.len(), logits.len());
        logits.zip_mut_with(&c, |l, &ci| *l -= ci);
    }
    let inv_t = T::from_f64(1.0) / temp;
    logits.mapv_inplace(|v| v * inv_t);
    let mut m = logits[0];
    for &v in logits.iter() {
        if v > m {
            m = v;
        }
    }
    let mut sum = T::from_f64(0.0);
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    logits.mapv_inplace(|v| v / sum);
    Ok(logits)
}

/// Cross-entropy of a student probability vector against a teacher target:
/// `−Σ_i t[i] · ln(max(s[i], 1e-12))`. Non-negative for probability inputs.
pub fn loss_gg<T: Scalar>(teacher_prob: ArrayView1<T>, student_prob: ArrayView1<T>) -> T {
    debug_assert_eq!(teacher_prob.len(), student_prob.len());
    let floor = T::from_f64(LOG_FLOOR);
    let mut total = T::from_f64(0.0);
    for (&t, &s) in teacher_prob.iter().zip(student_prob.iter()) {
        total -= t * s.max(floor).ln();
    }
    total
}

/// Sum of [`loss_gg`] of one teacher target against every local student
/// probability vector. Errors if the list is empty.
pub fn loss_lg<T: Scalar>(teacher_prob: ArrayView1<T>, local_probs: &[Array1<T>]) -> Result<T> {
    if local_probs.is_empty() {
        return Err(Error::ShapeMismatch("loss_lg: empty local view list".into()));
    }
    let mut total = T::from_f64(0.0);
    for l in local_probs {
        total += loss_gg(teacher_prob, l.view());
    }
    Ok(total)
}

/// Teacher targets for the views that appear on the teacher side of the
/// routing, in canonical id order (globals then locals). `raw` holds the
/// uncentered, unsharpened projections in the same order — these feed the
/// center update.
struct TeacherTargets<T: Scalar> {
    globals: Vec<Option<Array1<T>>>,
    locals: Vec<Option<Array1<T>>>,
    raw: Vec<Array1<T>>,
}

impl<T: Scalar> TeacherTargets<T> {
    fn get(&self, id: ViewId) -> &Array1<T> {
        match id {
            ViewId::Global(i) => self.globals[i].as_ref().expect("routed teacher global"),
            ViewId::Local(i) => self.locals[i].as_ref().expect("routed teacher local"),
        }
    }
}

fn frames_of<'a, T: Scalar>(views: &'a ViewSet<T>, id: ViewId) -> ArrayView4<'a, T> {
    match id {
        ViewId::Global(i) => views.globals[i].frames.view(),
        ViewId::Local(i) => views.locals[i].frames.view(),
    }
}

/// Run the teacher over every view the routing needs, center and sharpen.
fn compute_teacher_targets<T: Scalar>(
    views: &ViewSet<T>,
    teacher: &ModelParams<T>,
    config: &BackboneConfig,
    state: &DistillState<T>,
    teacher_temp: T,
    toggles: &LossToggles,
) -> Result<TeacherTargets<T>> {
    let n_locals = views.locals.len();
    let mut targets = TeacherTargets {
        globals: vec![None; views.globals.len()],
        locals: vec![None; n_locals],
        raw: Vec::new(),
    };
    let mut ids: Vec<ViewId> = Vec::new();
    if toggles.gg || toggles.lg {
        ids.push(ViewId::Global(0));
        ids.push(ViewId::Global(1));
    }
    if toggles.ll || toggles.gl {
        ids.extend((0..n_locals).map(ViewId::Local));
    }
    for id in ids {
        let out = forward(teacher, config, frames_of(views, id))?;
        let target = normalize(out.projected.view(), teacher_temp, Some(state.center.view()))?;
        match id {
            ViewId::Global(i) => targets.globals[i] = Some(target),
            ViewId::Local(i) => targets.locals[i] = Some(target),
        }
        targets.raw.push(out.projected);
    }
    Ok(targets)
}

/// Student views that appear on the student side of the routing, in
/// canonical id order.
fn student_ids(n_locals: usize, toggles: &LossToggles) -> Vec<ViewId> {
    let mut ids = Vec::new();
    if toggles.gg || toggles.gl {
        ids.push(ViewId::Global(0));
        ids.push(ViewId::Global(1));
    }
    if toggles.lg || toggles.ll {
        ids.extend((0..n_locals).map(ViewId::Local));
    }
    ids
}

/// Assemble a [`LossBreakdown`] from the ordered pair table and its values.
fn assemble<T: Scalar>(pairs: &[(ViewId, ViewId)], values: &[T]) -> LossBreakdown<T> {
    debug_assert_eq!(pairs.len(), values.len());
    let zero = T::from_f64(0.0);
    let (mut gg, mut lg, mut ll, mut gl) = (zero, zero, zero, zero);
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (&(s_id, t_id), &v) in pairs.iter().zip(values.iter()) {
        match (s_id, t_id) {
            (ViewId::Global(_), ViewId::Global(_)) => gg += v,
            (ViewId::Local(_), ViewId::Global(_)) => lg += v,
            (ViewId::Local(_), ViewId::Local(_)) => ll += v,
            (ViewId::Global(_), ViewId::Local(_)) => gl += v,
        }
        per_pair.push(PairLoss { student: s_id, teacher: t_id, value: v });
    }
    let total = gg + lg + ll + gl;
    LossBreakdown { l_gg: gg, l_lg: lg, l_ll: ll, l_gl: gl, total, per_pair }
}

/// Loss of one view set under the standard routing (globals matched across,
/// locals matched to both global targets). Forward passes only; see
/// [`distill_step_grads`] for the variant that also produces gradients.
pub fn route_and_match<T: Scalar>(
    views: &ViewSet<T>,
    student: &ModelParams<T>,
    teacher: &ModelParams<T>,
    config: &BackboneConfig,
    state: &DistillState<T>,
    teacher_temp: T,
) -> Result<LossBreakdown<T>> {
    route_and_match_with(views, student, teacher, config, state, teacher_temp, &LossToggles::default())
}

/// [`route_and_match`] with an explicit choice of pair families.
pub fn route_and_match_with<T: Scalar>(
    views: &ViewSet<T>,
    student: &ModelParams<T>,
    teacher: &ModelParams<T>,
    config: &BackboneConfig,
    state: &DistillState<T>,
    teacher_temp: T,
    toggles: &LossToggles,
) -> Result<LossBreakdown<T>> {
    let n_locals = views.locals.len();
    let pairs = route_pairs(n_locals, toggles);
    let targets = compute_teacher_targets(views, teacher, config, state, teacher_temp, toggles)?;
    let mut values = vec![T::from_f64(0.0); pairs.len()];
    for s_id in student_ids(n_locals, toggles) {
        let out = forward(student, config, frames_of(views, s_id))?;
        let s_prob = normalize(out.projected.view(), state.student_temp, None)?;
        for (idx, &(p_s, p_t)) in pairs.iter().enumerate() {
            if p_s == s_id {
                values[idx] = loss_gg(targets.get(p_t).view(), s_prob.view());
            }
        }
    }
    Ok(assemble(&pairs, &values))
}

/// Result of one distillation forward/backward over a view set.
#[derive(Debug)]
pub struct DistillStepOutput<T: Scalar> {
    /// Loss values, identical to what [`route_and_match_with`] returns for
    /// the same inputs.
    pub breakdown: LossBreakdown<T>,
    /// Gradient of `breakdown.total` with respect to every student
    /// parameter (summed over pairs, not averaged).
    pub grads: ModelParams<T>,
    /// Raw teacher projections (before centering and sharpening) for every
    /// view the teacher processed, in canonical id order. These feed
    /// [`center_update`].
    pub teacher_projections: Vec<Array1<T>>,
}

/// Compute the distillation loss and its gradient with respect to the
/// student parameters.
///
/// The teacher is read-only: targets are treated as constants, so no
/// gradient flows through them (the teacher moves only via [`ema_update`]).
/// The gradient of each pair's cross-entropy with respect to the student's
/// raw projection is `(student_prob − teacher_target) / student_temp`;
/// pairs sharing a student view are accumulated before one backward pass
/// through the backbone, so each student view is processed exactly once.
pub fn distill_step_grads<T: Scalar>(
    views: &ViewSet<T>,
    student: &ModelParams<T>,
    teacher: &ModelParams<T>,
    config: &BackboneConfig,
    state: &DistillState<T>,
    teacher_temp: T,
    toggles: &LossToggles,
) -> Result<DistillStepOutput<T>> {
    let n_locals = views.locals.len();
    let pairs = route_pairs(n_locals, toggles);
    let targets = compute_teacher_targets(views, teacher, config, state, teacher_temp, toggles)?;
    let mut values = vec![T::from_f64(0.0); pairs.len()];
    let mut grads = ModelParams::zeros(config);
    let one = T::from_f64(1.0);
    let inv_temp = one / state.student_temp;
    for s_id in student_ids(n_locals, toggles) {
        let (out, cache) = forward_cached(student, config, frames_of(views, s_id))?;
        let s_prob = normalize(out.projected.view(), state.student_temp, None)?;
        let mut d_projected = Array1::from_elem(s_prob.len(), T::from_f64(0.0));
        let mut touched = false;
        for (idx, &(p_s, p_t)) in pairs.iter().enumerate() {
            if p_s != s_id {
                continue;
            }
            let target = targets.get(p_t);
            values[idx] = loss_gg(target.view(), s_prob.view());
            for (d, (&p, &t)) in d_projected.iter_mut().zip(s_prob.iter().zip(target.iter())) {
                *d += (p - t) * inv_temp;
            }
            touched = true;
        }
        if touched {
            let g = backward(student, config, &cache, d_projected.view());
            grads.add_scaled(&g, one);
        }
    }
    Ok(DistillStepOutput {
        breakdown: assemble(&pairs, &values),
        grads,
        teacher_projections: targets.raw,
    })
}

/// In-place EMA: every teacher parameter ← `m·teacher + (1−m)·student`.
/// `m = 1` leaves the teacher unchanged; `m = 0` copies the student.
pub fn ema_update<T: Scalar>(teacher: &mut ModelParams<T>, student: &ModelParams<T>, momentum: T) {
    let one = T::from_f64(1.0);
    let mut t_entries = teacher.tensors_mut();
    let s_entries = student.tensors();
    debug_assert_eq!(t_entries.len(), s_entries.len());
    for (te, se) in t_entries.iter_mut().zip(s_entries.iter()) {
        debug_assert_eq!(te.name, se.name);
        debug_assert_eq!(te.data.len(), se.data.len());
        for (t, &s) in te.data.iter_mut().zip(se.data.iter()) {
            *t = momentum * *t + (one - momentum) * s;
        }
    }
}

/// In-place center EMA:
/// `center ← momentum·center + (1−momentum)·mean(teacher_outputs)`.
/// The outputs are raw teacher projections (before centering/sharpening).
pub fn center_update<T: Scalar>(
    center: &mut Array1<T>,
    teacher_outputs: &[Array1<T>],
    momentum: T,
) {
    assert!(!teacher_outputs.is_empty(), "center update needs a non-empty batch");
    let k = center.len();
    let mut mean = Array1::from_elem(k, T::from_f64(0.0));
    for out in teacher_outputs {
        debug_assert_eq!(out.len(), k);
        for (m, &v) in mean.iter_mut().zip(out.iter()) {
            *m += v;
        }
    }
    let inv_n = T::from_f64(1.0 / teacher_outputs.len() as f64);
    mean.mapv_inplace(|v| v * inv_n);
    let one = T::from_f64(1.0);
    for (c, &m) in center.iter_mut().zip(mean.iter()) {
        *c = momentum * *c + (one - momentum) * m;
    }
}

/// Teacher temperature at training progress `p ∈ [0, 1]`: linear ramp from
/// [`TEACHER_TEMP_START`] to [`TEACHER_TEMP_END`] over the first
/// [`TEACHER_TEMP_WARM_FRAC`] of training, then flat.
pub fn teacher_temp_at(progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    if p >= TEACHER_TEMP_WARM_FRAC {
        TEACHER_TEMP_END
    } else {
        TEACHER_TEMP_START + (TEACHER_TEMP_END - TEACHER_TEMP_START) * (p / TEACHER_TEMP_WARM_FRAC)
    }
}

/// Teacher EMA momentum at step `k` of `total`: half-cosine ramp from
/// [`EMA_MOMENTUM_BASE`] at the first step to exactly 1.0 at the last.
pub fn ema_momentum_at(k: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let ratio = (k as f64 / total as f64).clamp(0.0, 1.0);
    1.0 - (1.0 - EMA_MOMENTUM_BASE) * ((std::f64::consts::PI * ratio).cos() + 1.0) / 2.0
}
