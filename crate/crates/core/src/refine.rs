//! The pitch-to-finger correction: pick the audio-guided fingerboard position
//! among the per-string candidates, bind it to a fingertip, hold bindings
//! steady across vibrato spans, and run bounded two-joint inverse kinematics
//! to place the note-playing fingertip on the target.

use crate::audio::VibratoSpan;
use crate::instrument::Candidate;
use crate::kinematics::{
    forward_kinematics, Finger, HandPose, HandSkeleton, KinematicsError, JOINT_COUNT, WRIST,
};
use crate::solver::{minimize_bounded, Bounds, QuasiNewtonOptions};
use nalgebra::{DVector, Point3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("binding carries no finger: open-string frames are not refined")]
    NoFingerBound,
    #[error("joint {0} has no flexion axis")]
    MissingFlexionAxis(usize),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Per-frame decision pairing an audio-guided fingerboard point with the
/// fingertip that should touch it. `finger` is `None` for open strings,
/// which need no correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingDecision {
    pub frame_id: usize,
    pub string_index: usize,
    /// The audio-guided position on the bound string.
    pub target_point: Point3<f64>,
    pub finger: Option<Finger>,
}

/// How a candidate was resolved for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// A stopped note: correct the nearest fingertip toward the target.
    Pressed { string_index: usize, target: Point3<f64> },
    /// The pitch matches an open string and no fingertip is near the board.
    OpenString { string_index: usize, target: Point3<f64> },
}

/// Candidate selection settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BindingParams {
    /// Candidates within this tolerance of a string fundamental count as
    /// open-string positions.
    pub open_string_tolerance_cents: f64,
    /// A fingertip within this distance of a candidate counts as pressing.
    pub press_threshold_m: f64,
    /// Whether the thumb participates in binding (thumb-position technique).
    pub include_thumb: bool,
}

impl Default for BindingParams {
    fn default() -> Self {
        Self {
            open_string_tolerance_cents: 25.0,
            press_threshold_m: 0.015,
            include_thumb: false,
        }
    }
}

fn bindable_fingers(include_thumb: bool) -> &'static [Finger] {
    if include_thumb {
        &Finger::ALL
    } else {
        &Finger::ALL[1..]
    }
}

/// Resolve the pitch ambiguity across strings. An open-string candidate wins
/// when no fingertip is pressing anywhere; otherwise the candidate nearest
/// the wrist wins, with ties broken by the distance to the nearest
/// fingertip. Returns `None` on an empty candidate list (no correction that
/// frame).
pub fn select_candidate(
    candidates: &[Candidate],
    hand_joints: &[Point3<f64>; JOINT_COUNT],
    params: &BindingParams,
) -> Option<Selection> {
    if candidates.is_empty() {
        return None;
    }
    let tips: Vec<Point3<f64>> = bindable_fingers(params.include_thumb)
        .iter()
        .map(|f| hand_joints[f.tip()])
        .collect();
    let nearest_tip_distance = |p: &Point3<f64>| {
        tips.iter()
            .map(|t| (t - p).norm())
            .fold(f64::INFINITY, f64::min)
    };

    let pressing_somewhere = candidates
        .iter()
        .any(|c| nearest_tip_distance(&c.position) <= params.press_threshold_m);
    if !pressing_somewhere {
        if let Some(open) = candidates.iter().find(|c| c.is_open) {
            return Some(Selection::OpenString {
                string_index: open.string_index,
                target: open.position,
            });
        }
    }

    let wrist = hand_joints[WRIST];
    let best = candidates
        .iter()
        .min_by(|a, b| {
            let da = (a.position - wrist).norm();
            let db = (b.position - wrist).norm();
            da.total_cmp(&db).then_with(|| {
                nearest_tip_distance(&a.position).total_cmp(&nearest_tip_distance(&b.position))
            })
        })
        .expect("non-empty candidates");
    Some(Selection::Pressed {
        string_index: best.string_index,
        target: best.position,
    })
}

/// The finger whose tip is nearest the target, scanning in anatomical order
/// so exact ties resolve to the earlier finger. The thumb is excluded unless
/// configured in.
pub fn bind_finger(
    target: &Point3<f64>,
    hand_joints: &[Point3<f64>; JOINT_COUNT],
    params: &BindingParams,
) -> Finger {
    let mut best = None;
    let mut best_distance = f64::INFINITY;
    for &finger in bindable_fingers(params.include_thumb) {
        let d = (hand_joints[finger.tip()] - target).norm();
        if d < best_distance {
            best_distance = d;
            best = Some(finger);
        }
    }
    best.expect("at least one bindable finger")
}

/// A vibrato span that could not be locked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockWarning {
    pub span_start: usize,
    pub span_end: usize,
    pub reason: String,
}

/// Hold the string and finger fixed across each vibrato span, copying them
/// from the span's onset frame while the target point is still recomputed
/// per frame from that frame's pitch on the locked string (`target_for`
/// supplies it). Spans whose onset has no decision are skipped with a
/// warning. The pass is idempotent.
pub fn lock_bindings_over_vibrato(
    decisions: &mut [Option<BindingDecision>],
    spans: &[VibratoSpan],
    mut target_for: impl FnMut(usize, usize) -> Option<Point3<f64>>,
) -> Vec<LockWarning> {
    let mut warnings = Vec::new();
    for span in spans {
        let onset = span.start_frame;
        let Some(Some(lock)) = decisions.get(onset).cloned() else {
            warnings.push(LockWarning {
                span_start: span.start_frame,
                span_end: span.end_frame,
                reason: "span onset frame has no binding decision".into(),
            });
            continue;
        };
        for frame in span.start_frame..=span.end_frame.min(decisions.len().saturating_sub(1)) {
            if let Some(target) = target_for(frame, lock.string_index) {
                decisions[frame] = Some(BindingDecision {
                    frame_id: frame,
                    string_index: lock.string_index,
                    target_point: target,
                    finger: lock.finger,
                });
            }
        }
    }
    warnings
}

/// Flexion ranges for the two refined joints, radians.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FlexionBounds {
    pub pip_min: f64,
    pub pip_max: f64,
    pub dip_min: f64,
    pub dip_max: f64,
}

impl Default for FlexionBounds {
    fn default() -> Self {
        Self {
            pip_min: 0.0,
            pip_max: 110f64.to_radians(),
            dip_min: 0.0,
            dip_max: 90f64.to_radians(),
        }
    }
}

/// Fingertip refinement settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub bounds: FlexionBounds,
    /// Per-iteration step clamp, radians. Short steps keep the solver inside
    /// anthropometric territory.
    pub max_step_rad: f64,
    pub max_iterations: usize,
    /// Central finite-difference half step, radians.
    pub fd_step_rad: f64,
    /// Residuals above this are flagged reach-limited, meters.
    pub reach_tolerance_m: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            bounds: FlexionBounds::default(),
            max_step_rad: 0.1,
            max_iterations: 100,
            fd_step_rad: 1e-6,
            reach_tolerance_m: 1e-3,
        }
    }
}

/// Outcome of [`refine_finger_ik`].
#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub adjusted_pose: HandPose,
    /// Final flexion of the proximal refined joint, radians.
    pub pip_angle: f64,
    /// Final flexion of the distal refined joint, radians.
    pub dip_angle: f64,
    /// Final tip-to-target distance, meters.
    pub residual: f64,
    /// True when the target stayed out of reach within the bounds.
    pub reach_limited: bool,
    /// Residual after every accepted step, starting at the input pose.
    pub residual_trace: Vec<f64>,
}

/// Twist component of `q` about `axis` (swing-twist decomposition), as the
/// remaining swing rotation and the signed twist angle.
fn swing_twist(q: &UnitQuaternion<f64>, axis: &Unit<Vector3<f64>>) -> (UnitQuaternion<f64>, f64) {
    let v = q.imag();
    let projected = axis.into_inner() * v.dot(axis);
    let twist_raw = nalgebra::Quaternion::from_parts(q.scalar(), projected);
    if twist_raw.norm() < 1e-12 {
        // 180-degree swing orthogonal to the axis: no twist component.
        return (*q, 0.0);
    }
    let twist = UnitQuaternion::new_normalize(twist_raw);
    let swing = q * twist.inverse();
    let angle = 2.0 * v.dot(axis).atan2(q.scalar());
    // Fold into (-pi, pi].
    let angle = (angle + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
        - std::f64::consts::PI;
    (swing, angle)
}

/// Place the bound fingertip on the audio-guided target by adjusting the
/// finger's two distal flexion angles only (PIP and DIP; MCP and IP for the
/// thumb), under bounded quasi-Newton with a step clamp. Flexion is a scalar
/// twist about each joint's lateral axis; any swing present in the input
/// rotation is preserved. Every joint outside the two refined ones is
/// bit-identical to the input, and the residual never increases.
pub fn refine_finger_ik(
    pose: &HandPose,
    skeleton: &HandSkeleton,
    binding: &BindingDecision,
    params: &IkParams,
) -> Result<RefinementResult, RefineError> {
    let finger = binding.finger.ok_or(RefineError::NoFingerBound)?;
    let (pip, dip) = finger.flex_joints();
    let pip_axis = skeleton
        .flexion_axis(pip)
        .ok_or(RefineError::MissingFlexionAxis(pip))?;
    let dip_axis = skeleton
        .flexion_axis(dip)
        .ok_or(RefineError::MissingFlexionAxis(dip))?;

    let (pip_swing, pip_angle0) = swing_twist(pose.local_rotation(pip), &pip_axis);
    let (dip_swing, dip_angle0) = swing_twist(pose.local_rotation(dip), &dip_axis);
    let target = binding.target_point;
    let tip = finger.tip();

    let mut working = pose.clone();
    let mut cost = |angles: &DVector<f64>| {
        working.set_local_rotation(
            pip,
            pip_swing * UnitQuaternion::from_axis_angle(&pip_axis, angles[0]),
        );
        working.set_local_rotation(
            dip,
            dip_swing * UnitQuaternion::from_axis_angle(&dip_axis, angles[1]),
        );
        (forward_kinematics(skeleton, &working)[tip] - target).norm()
    };

    let bounds = Bounds::new(
        DVector::from_vec(vec![params.bounds.pip_min, params.bounds.dip_min]),
        DVector::from_vec(vec![params.bounds.pip_max, params.bounds.dip_max]),
    );
    let options = QuasiNewtonOptions {
        max_iterations: params.max_iterations,
        max_step: params.max_step_rad,
        fd_step: params.fd_step_rad,
        gradient_tolerance: 1e-10,
    };
    let start = DVector::from_vec(vec![pip_angle0, dip_angle0]);
    let solution = minimize_bounded(&mut cost, start, &bounds, &options);

    // If nothing improved, hand back the input pose verbatim so untouched
    // frames stay bit-identical end to end.
    let (adjusted_pose, residual, pip_angle, dip_angle) = if solution.accepted_steps == 0 {
        let residual = (forward_kinematics(skeleton, pose)[tip] - target).norm();
        (pose.clone(), residual, pip_angle0, dip_angle0)
    } else {
        let mut adjusted = pose.clone();
        adjusted.set_local_rotation(
            pip,
            pip_swing * UnitQuaternion::from_axis_angle(&pip_axis, solution.x[0]),
        );
        adjusted.set_local_rotation(
            dip,
            dip_swing * UnitQuaternion::from_axis_angle(&dip_axis, solution.x[1]),
        );
        (adjusted, solution.value, solution.x[0], solution.x[1])
    };

    Ok(RefinementResult {
        adjusted_pose,
        pip_angle,
        dip_angle,
        residual,
        reach_limited: residual > params.reach_tolerance_m,
        residual_trace: solution.trace,
    })
}
