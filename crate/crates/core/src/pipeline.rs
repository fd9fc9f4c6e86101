//! End-to-end orchestration: triangulate named keypoints, model the
//! instrument, estimate the hand, look up the pitch, bind and refine the
//! note-playing finger, and assemble the per-frame outputs.
//!
//! Per-frame stage order: (1) RANSAC triangulation of every named keypoint;
//! (2) instrument model from the nut/bridge landmarks; (3) hand pose, either
//! by fusing per-view joint rotations and aligning the wrist onto the
//! triangulated joints, or by fitting a pose directly to the triangulated
//! joints when no rotations are supplied; (4) pitch lookup through the
//! clap-alignment offset; (5) candidate generation, selection, and fingertip
//! binding; (6) a whole-timeline vibrato lock pass; (7) per-frame fingertip
//! refinement; (8) output assembly. Per-frame failures become skip reasons,
//! never aborts.

use crate::audio::{
    align_streams, detect_clap, detect_pitch, detect_vibrato, pitch_at_video_frame, AudioBuffer,
    AudioError, PitchFrame, PitchTrack, VibratoSpan,
};
use crate::config::{InstrumentConfig, PipelineConfig};
use crate::geometry::{
    triangulate_ransac, CameraRig, GeometryError, Observation2D, ReconstructedPoint, ViewId,
};
use crate::instrument::{
    bowed_string, build_strings, candidate_positions, position_on_string,
    vibrating_length_for_pitch, BowState, InstrumentModel,
};
use crate::kinematics::{
    align_wrist, forward_kinematics, forward_kinematics_local, fuse_rotations, view_weight, HandPose, HandSkeleton, KinematicsError, Rotation6D, ARTICULATED_JOINTS, JOINT_COUNT,
    WRIST,
};
use crate::refine::{
    bind_finger, refine_finger_ik, select_candidate, BindingDecision, Selection,
};
use crate::seeding::derive_seed;
use nalgebra::{Point3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Reserved keypoint names: the 21 left-hand joints are `hand_left_0` ..
/// `hand_left_20`; instrument landmarks are `nut_l`, `nut_r`, `bridge_l`,
/// `bridge_r`; the bow is `frog` and `tip`; body keypoints use a `body_`
/// prefix (`body_shoulder_l` and `body_shoulder_r` feed facing estimation).
pub fn hand_keypoint_name(joint: usize) -> String {
    format!("hand_left_{joint}")
}

pub const NUT_L: &str = "nut_l";
pub const NUT_R: &str = "nut_r";
pub const BRIDGE_L: &str = "bridge_l";
pub const BRIDGE_R: &str = "bridge_r";
pub const FROG: &str = "frog";
pub const BOW_TIP: &str = "tip";
pub const BODY_SHOULDER_L: &str = "body_shoulder_l";
pub const BODY_SHOULDER_R: &str = "body_shoulder_r";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid scene input: {0}")]
    InvalidInput(String),
    #[error("hand joints are implausible: bone {joint} deviates {deviation_percent:.0}% from the skeleton")]
    ImplausibleHand { joint: usize, deviation_percent: f64 },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// One detected keypoint in one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub position: Vector2<f64>,
    pub confidence: f64,
}

/// Everything one camera saw in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewObservations {
    pub view_id: ViewId,
    pub keypoints: BTreeMap<String, Keypoint2D>,
    /// Optional per-view local rotations for the 15 articulated hand joints,
    /// in [`ARTICULATED_JOINTS`] order.
    pub hand_rotations_6d: Option<Vec<Rotation6D>>,
}

/// All views of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservations {
    pub frame_id: usize,
    pub views: Vec<ViewObservations>,
    /// Performer facing direction override; when absent it is estimated from
    /// the shoulders and wrist.
    pub facing: Option<Vector3<f64>>,
}

/// Audio input: raw samples, a precomputed track, or nothing.
#[derive(Debug, Clone)]
pub enum AudioSource {
    Wav(AudioBuffer),
    Track(PitchTrack),
    None,
}

/// Manual clap synchronization info. The clap sample index is detected from
/// the audio when not supplied.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SyncInfo {
    pub clap_video_frame: Option<usize>,
    pub clap_sample: Option<usize>,
}

/// Fully resolved input for one run.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub rig: CameraRig,
    pub frames: Vec<FrameObservations>,
    pub audio: AudioSource,
    pub instrument: InstrumentConfig,
    pub skeleton: HandSkeleton,
    pub sync: SyncInfo,
    pub fps: f64,
}

/// Why a frame produced no binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// No pitch at this frame.
    Unvoiced,
    /// Pitch below the lowest string.
    NoCandidates,
    /// Instrument landmarks missing or degenerate.
    NoInstrument,
    /// Hand joints missing or implausible.
    NoHand,
    /// Audio stages disabled by configuration.
    AudioDisabled,
}

/// Fingertip refinement summary for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementSummary {
    pub pre_residual_m: f64,
    pub post_residual_m: f64,
    pub reach_limited: bool,
    pub accepted_steps: usize,
}

/// Per-frame pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame_id: usize,
    pub pitch_hz: Option<f64>,
    pub pitch_confidence: Option<f64>,
    /// Every triangulated keypoint by name.
    pub points: BTreeMap<String, ReconstructedPoint>,
    /// Hand joints before refinement (vision-only), 21 entries.
    pub hand_pre: Option<Vec<Point3<f64>>>,
    /// Hand joints after fingertip refinement; equals `hand_pre` on frames
    /// with nothing to refine.
    pub hand_post: Option<Vec<Point3<f64>>>,
    pub instrument: Option<InstrumentModel>,
    pub bow: Option<BowState>,
    pub bowed_string: Option<usize>,
    pub binding: Option<BindingDecision>,
    pub refinement: Option<RefinementSummary>,
    pub skip_reason: Option<SkipReason>,
}

/// Whole-scene pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutput {
    pub fps: f64,
    pub audio_offset_frames: i64,
    pub vibrato_spans: Vec<VibratoSpan>,
    pub frames: Vec<FrameOutput>,
    pub warnings: Vec<String>,
}

/// Fit a hand pose directly to 21 observed world joints: the wrist is
/// anchored exactly, the wrist rotation comes from a Procrustes fit about
/// the wrist, and each articulated joint receives the minimal rotation that
/// carries its rest segment onto the observed segment direction.
pub fn fit_pose_to_joints(
    joints: &[Point3<f64>; JOINT_COUNT],
    skeleton: &HandSkeleton,
) -> Result<HandPose, PipelineError> {
    for j in 1..JOINT_COUNT {
        let parent = skeleton.parent(j).expect("non-root joint");
        let observed = (joints[j] - joints[parent]).norm();
        let expected = skeleton.bone_length(j);
        let deviation = (observed - expected).abs() / expected;
        if deviation >= 0.5 {
            return Err(PipelineError::ImplausibleHand {
                joint: j,
                deviation_percent: deviation * 100.0,
            });
        }
    }

    // Wrist transform from the palm only: the wrist and the five metacarpal
    // bases are rigid in the wrist frame regardless of articulation, so
    // fitting just those recovers the true transform exactly for exact
    // input (curled fingers would skew a whole-hand fit).
    let rest = forward_kinematics_local(skeleton, &HandPose::identity());
    let mut palm_weights = [0.0; JOINT_COUNT];
    palm_weights[WRIST] = 1.0;
    for j in 1..JOINT_COUNT {
        if skeleton.parent(j) == Some(WRIST) {
            palm_weights[j] = 1.0;
        }
    }
    let fit = align_wrist(&rest, joints, &palm_weights)?;
    let wrist_rotation = fit.rotation;

    let mut pose = HandPose::identity();
    pose.wrist_rotation = wrist_rotation;
    pose.wrist_translation = fit.translation;

    // Chain-wise recovery: local(j) is the minimal rotation taking the rest
    // direction of j's child segment onto the observed direction, expressed
    // in j's parent frame.
    let mut accumulated = [UnitQuaternion::identity(); JOINT_COUNT];
    let mut order: Vec<usize> = vec![WRIST];
    let mut cursor = 0;
    while cursor < order.len() {
        let j = order[cursor];
        cursor += 1;
        for c in 1..JOINT_COUNT {
            if skeleton.parent(c) == Some(j) {
                order.push(c);
            }
        }
        if !skeleton.is_articulated(j) && j != WRIST {
            continue;
        }
        let parent_acc = skeleton
            .parent(j)
            .map(|p| accumulated[p])
            .unwrap_or_else(UnitQuaternion::identity);
        if j == WRIST {
            accumulated[j] = UnitQuaternion::identity();
            continue;
        }
        let child = skeleton.child(j).expect("articulated joints have a child");
        let observed_world = joints[child] - joints[j];
        let observed_wrist = wrist_rotation.inverse() * observed_world;
        let target_local = parent_acc.inverse() * observed_wrist;
        let rest_dir = skeleton.rest_direction(child).into_inner();
        let local = UnitQuaternion::rotation_between(&rest_dir, &target_local)
            .unwrap_or_else(|| {
                // Antiparallel: rotate half a turn about any perpendicular.
                let mut perp = rest_dir.cross(&Vector3::z());
                if perp.norm_squared() < 1e-12 {
                    perp = rest_dir.cross(&Vector3::x());
                }
                UnitQuaternion::from_axis_angle(&Unit::new_normalize(perp), std::f64::consts::PI)
            });
        pose.set_local_rotation(j, local);
        accumulated[j] = parent_acc * local;
    }
    Ok(pose)
}

struct FrameState {
    points: BTreeMap<String, ReconstructedPoint>,
    instrument: Option<InstrumentModel>,
    bow: Option<BowState>,
    pose: Option<HandPose>,
    hand_pre: Option<[Point3<f64>; JOINT_COUNT]>,
}

/// Run the full pipeline over a scene.
pub fn run_pipeline(
    input: &SceneInput,
    config: &PipelineConfig,
) -> Result<SceneOutput, PipelineError> {
    if !(input.fps > 0.0) {
        return Err(PipelineError::InvalidInput("fps must be positive".into()));
    }
    if input.rig.is_empty() {
        return Err(PipelineError::InvalidInput("camera rig is empty".into()));
    }
    let mut warnings = Vec::new();

    // Audio preparation: pitch track and clap-alignment offset.
    let audio_on = config.stages.audio_enabled;
    let track: Option<PitchTrack> = if audio_on {
        match &input.audio {
            AudioSource::Wav(buffer) => Some(detect_pitch(buffer, input.fps, &config.pitch)?),
            AudioSource::Track(track) => {
                if (track.fps - input.fps).abs() > 1e-9 {
                    warnings.push(format!(
                        "pitch track fps {} differs from scene fps {}",
                        track.fps, input.fps
                    ));
                }
                Some(track.clone())
            }
            AudioSource::None => None,
        }
    } else {
        None
    };
    let offset = match (&track, input.sync.clap_video_frame) {
        (Some(_), Some(clap_frame)) => {
            let clap_sample = match input.sync.clap_sample {
                Some(sample) => Some(sample),
                None => match &input.audio {
                    AudioSource::Wav(buffer) => match detect_clap(buffer, &config.clap) {
                        Ok(sample) => Some(sample),
                        Err(err) => {
                            warnings.push(format!("clap detection failed: {err}; assuming offset 0"));
                            None
                        }
                    },
                    _ => {
                        warnings.push(
                            "clap frame given without audio samples or clap sample; assuming offset 0"
                                .into(),
                        );
                        None
                    }
                },
            };
            match (clap_sample, &input.audio) {
                (Some(sample), AudioSource::Wav(buffer)) => {
                    align_streams(sample, clap_frame, buffer.sample_rate, input.fps)
                }
                _ => 0,
            }
        }
        _ => 0,
    };

    // Stages 1-3 per frame.
    let mut states: Vec<FrameState> = Vec::with_capacity(input.frames.len());
    let mut unknown_views: BTreeSet<ViewId> = BTreeSet::new();
    for frame in &input.frames {
        states.push(process_vision_stages(
            frame,
            input,
            config,
            &mut warnings,
            &mut unknown_views,
        ));
    }

    // Stages 4-5: pitch lookup, candidates, selection, binding.
    let empty = PitchTrack {
        fps: input.fps,
        frames: vec![],
    };
    let track_ref = track.as_ref().unwrap_or(&empty);
    let mut pitches: Vec<PitchFrame> = Vec::with_capacity(input.frames.len());
    let mut decisions: Vec<Option<BindingDecision>> = Vec::with_capacity(input.frames.len());
    let mut skips: Vec<Option<SkipReason>> = Vec::with_capacity(input.frames.len());
    for (idx, frame) in input.frames.iter().enumerate() {
        let pitch = if audio_on {
            pitch_at_video_frame(track_ref, offset, idx)
        } else {
            PitchFrame::UNVOICED
        };
        pitches.push(pitch);
        let (decision, skip) = bind_frame(frame.frame_id, &pitch, &states[idx], config, audio_on);
        decisions.push(decision);
        skips.push(skip);
    }

    // Stage 6: vibrato lock over the whole timeline.
    let aligned_track = PitchTrack {
        fps: input.fps,
        frames: pitches.clone(),
    };
    let spans = if audio_on {
        detect_vibrato(&aligned_track, &config.vibrato)
    } else {
        Vec::new()
    };
    let lock_warnings = crate::refine::lock_bindings_over_vibrato(
        &mut decisions,
        &spans,
        |frame, string_index| {
            let pitch = pitches.get(frame)?.f0_hz?;
            let model = states.get(frame)?.instrument.as_ref()?;
            let string = model.string(string_index);
            let length = vibrating_length_for_pitch(
                pitch,
                string,
                config.binding.open_string_tolerance_cents,
            )
            .ok()?;
            position_on_string(string, length).ok()
        },
    );
    for w in lock_warnings {
        warnings.push(format!(
            "vibrato span {}..{} skipped: {}",
            w.span_start, w.span_end, w.reason
        ));
    }
    for (idx, decision) in decisions.iter().enumerate() {
        if decision.is_some() {
            skips[idx] = None;
        }
    }

    // Stages 7-8: refinement and assembly.
    let mut frames_out = Vec::with_capacity(input.frames.len());
    for (idx, frame) in input.frames.iter().enumerate() {
        let state = &states[idx];
        let decision = decisions[idx].clone();
        let pitch = pitches[idx];

        let mut hand_post = state.hand_pre;
        let mut refinement = None;
        if let (Some(d), Some(pose), Some(pre)) = (&decision, &state.pose, &state.hand_pre) {
            if let Some(finger) = d.finger {
                let pre_residual = (pre[finger.tip()] - d.target_point).norm();
                match refine_finger_ik(pose, &input.skeleton, d, &config.ik) {
                    Ok(result) => {
                        let refined = forward_kinematics(&input.skeleton, &result.adjusted_pose);
                        refinement = Some(RefinementSummary {
                            pre_residual_m: pre_residual,
                            post_residual_m: result.residual,
                            reach_limited: result.reach_limited,
                            accepted_steps: result.residual_trace.len() - 1,
                        });
                        hand_post = Some(refined);
                    }
                    Err(err) => {
                        warnings.push(format!("frame {}: refinement failed: {err}", frame.frame_id));
                    }
                }
            }
        }

        frames_out.push(FrameOutput {
            frame_id: frame.frame_id,
            pitch_hz: pitch.f0_hz,
            pitch_confidence: pitch.f0_hz.map(|_| pitch.confidence),
            points: state.points.clone(),
            hand_pre: state.hand_pre.map(|j| j.to_vec()),
            hand_post: hand_post.map(|j| j.to_vec()),
            instrument: state.instrument.clone(),
            bow: state.bow.clone(),
            bowed_string: match (&state.bow, &state.instrument) {
                (Some(bow), Some(model)) => {
                    bowed_string(bow, model, config.stages.bow_contact_threshold_m)
                }
                _ => None,
            },
            binding: decision,
            refinement,
            skip_reason: skips[idx],
        });
    }

    Ok(SceneOutput {
        fps: input.fps,
        audio_offset_frames: offset,
        vibrato_spans: spans,
        frames: frames_out,
        warnings,
    })
}

/// Stages 1-3 for one frame: triangulation, instrument model, hand pose.
fn process_vision_stages(
    frame: &FrameObservations,
    input: &SceneInput,
    config: &PipelineConfig,
    warnings: &mut Vec<String>,
    unknown_views: &mut BTreeSet<ViewId>,
) -> FrameState {
    // Stage 1: gather per-name observations across views and triangulate.
    let mut by_name: BTreeMap<&str, Vec<Observation2D>> = BTreeMap::new();
    for view in &frame.views {
        if input.rig.get(&view.view_id).is_none() {
            if unknown_views.insert(view.view_id.clone()) {
                warnings.push(format!(
                    "view {:?} is not in the rig; its observations are ignored",
                    view.view_id
                ));
            }
            continue;
        }
        for (name, kp) in &view.keypoints {
            match Observation2D::new(view.view_id.clone(), kp.position, kp.confidence) {
                Ok(obs) => by_name.entry(name).or_default().push(obs),
                Err(err) => warnings.push(format!(
                    "frame {} view {:?} keypoint {name:?}: {err}",
                    frame.frame_id, view.view_id
                )),
            }
        }
    }
    let mut points: BTreeMap<String, ReconstructedPoint> = BTreeMap::new();
    for (name, observations) in &by_name {
        let seed = derive_seed(config.stages.seed, name, frame.frame_id as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(point) = triangulate_ransac(observations, &input.rig, &config.ransac, &mut rng) {
            points.insert((*name).to_string(), point);
        }
    }

    // Stage 2: instrument model from the four landmarks.
    let landmark = |name: &str| points.get(name).map(|p| p.position);
    let instrument = match (
        landmark(NUT_L),
        landmark(NUT_R),
        landmark(BRIDGE_L),
        landmark(BRIDGE_R),
    ) {
        (Some(nl), Some(nr), Some(bl), Some(br)) => match build_strings(
            nl,
            nr,
            bl,
            br,
            input.instrument.tunings(),
            input.instrument.spacing_fractions,
            input.instrument.string_names(),
            frame.frame_id,
        ) {
            Ok(model) => Some(model),
            Err(err) => {
                warnings.push(format!("frame {}: instrument: {err}", frame.frame_id));
                None
            }
        },
        _ => None,
    };

    let bow = match (landmark(FROG), landmark(BOW_TIP)) {
        (Some(frog), Some(tip)) => BowState::new(frog, tip, frame.frame_id).ok(),
        _ => None,
    };

    // Stage 3: hand pose.
    let hand_points: Vec<Option<Point3<f64>>> = (0..JOINT_COUNT)
        .map(|j| landmark(&hand_keypoint_name(j)))
        .collect();
    let pose = estimate_hand_pose(frame, input, &hand_points, &points, warnings);
    let hand_pre = pose
        .as_ref()
        .map(|p| forward_kinematics(&input.skeleton, p));

    FrameState {
        points,
        instrument,
        bow,
        pose,
        hand_pre,
    }
}

/// Stage 3 detail: fused-rotation path when any view carries joint
/// rotations, otherwise a direct fit to the triangulated joints.
fn estimate_hand_pose(
    frame: &FrameObservations,
    input: &SceneInput,
    hand_points: &[Option<Point3<f64>>],
    points: &BTreeMap<String, ReconstructedPoint>,
    warnings: &mut Vec<String>,
) -> Option<HandPose> {
    let rotation_views: Vec<&ViewObservations> = frame
        .views
        .iter()
        .filter(|v| {
            v.hand_rotations_6d.as_ref().is_some_and(|r| {
                if r.len() == ARTICULATED_JOINTS.len() {
                    true
                } else {
                    warnings.push(format!(
                        "frame {} view {:?}: expected {} joint rotations, got {}; ignored",
                        frame.frame_id,
                        v.view_id,
                        ARTICULATED_JOINTS.len(),
                        r.len()
                    ));
                    false
                }
            }) && input.rig.get(&v.view_id).is_some()
        })
        .collect();

    if !rotation_views.is_empty() {
        let facing = frame
            .facing
            .and_then(|f| Unit::try_new(f, 1e-9))
            .or_else(|| estimate_facing(points, hand_points));
        let mut weights: Vec<f64> = rotation_views
            .iter()
            .map(|v| {
                let camera = input.rig.get(&v.view_id).expect("filtered above");
                facing
                    .as_ref()
                    .map(|f| view_weight(&camera.pose, f))
                    .unwrap_or(1.0)
            })
            .collect();
        if weights.iter().all(|w| *w <= 0.0) {
            weights = vec![1.0; rotation_views.len()];
        }

        let mut pose = HandPose::identity();
        for (slot, &joint) in ARTICULATED_JOINTS.iter().enumerate() {
            let mut quats = Vec::with_capacity(rotation_views.len());
            for (v, w) in rotation_views.iter().zip(&weights) {
                let rot = &v.hand_rotations_6d.as_ref().expect("filtered")[slot];
                match rot.to_quaternion() {
                    Ok(q) => quats.push((q, *w)),
                    Err(err) => warnings.push(format!(
                        "frame {} view {:?} joint {joint}: {err}",
                        frame.frame_id, v.view_id
                    )),
                }
            }
            match fuse_rotations(&quats) {
                Ok(q) => pose.set_local_rotation(joint, q),
                Err(err) => {
                    warnings.push(format!(
                        "frame {}: rotation fusion failed at joint {joint}: {err}",
                        frame.frame_id
                    ));
                    return None;
                }
            }
        }

        // Wrist transform from the triangulated joints that exist.
        let local = forward_kinematics_local(&input.skeleton, &pose);
        let mut targets = [Point3::origin(); JOINT_COUNT];
        let mut joint_weights = [0.0; JOINT_COUNT];
        let mut present = 0;
        for j in 0..JOINT_COUNT {
            if let Some(p) = hand_points[j] {
                targets[j] = p;
                joint_weights[j] = 1.0;
                present += 1;
            }
        }
        if present < 3 {
            warnings.push(format!(
                "frame {}: only {present} hand joints triangulated; hand skipped",
                frame.frame_id
            ));
            return None;
        }
        match align_wrist(&local, &targets, &joint_weights) {
            Ok(fit) => {
                pose.wrist_rotation = fit.rotation;
                pose.wrist_translation = fit.translation;
                Some(pose)
            }
            Err(err) => {
                warnings.push(format!("frame {}: wrist alignment: {err}", frame.frame_id));
                None
            }
        }
    } else {
        let mut joints = [Point3::origin(); JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            {
                let p = hand_points[j]?;
                joints[j] = p
            }
        }
        match fit_pose_to_joints(&joints, &input.skeleton) {
            Ok(pose) => Some(pose),
            Err(err) => {
                warnings.push(format!("frame {}: {err}", frame.frame_id));
                None
            }
        }
    }
}

/// Facing from the shoulder pair and the wrist: the normal of their plane,
/// oriented away from the torso as `(wrist - shoulder_r) x (shoulder_l -
/// shoulder_r)`, normalized.
fn estimate_facing(
    points: &BTreeMap<String, ReconstructedPoint>,
    hand_points: &[Option<Point3<f64>>],
) -> Option<Unit<Vector3<f64>>> {
    let shoulder_l = points.get(BODY_SHOULDER_L)?.position;
    let shoulder_r = points.get(BODY_SHOULDER_R)?.position;
    let wrist = hand_points[WRIST]?;
    Unit::try_new((wrist - shoulder_r).cross(&(shoulder_l - shoulder_r)), 1e-9)
}

/// Stages 4-5 for one frame.
fn bind_frame(
    frame_id: usize,
    pitch: &PitchFrame,
    state: &FrameState,
    config: &PipelineConfig,
    audio_on: bool,
) -> (Option<BindingDecision>, Option<SkipReason>) {
    if !audio_on {
        return (None, Some(SkipReason::AudioDisabled));
    }
    let Some(f0) = pitch.f0_hz else {
        return (None, Some(SkipReason::Unvoiced));
    };
    let Some(model) = &state.instrument else {
        return (None, Some(SkipReason::NoInstrument));
    };
    let Some(hand) = &state.hand_pre else {
        return (None, Some(SkipReason::NoHand));
    };
    let candidates =
        match candidate_positions(f0, model, config.binding.open_string_tolerance_cents) {
            Ok(c) => c,
            Err(_) => return (None, Some(SkipReason::NoCandidates)),
        };
    match select_candidate(&candidates, hand, &config.binding) {
        None => (None, Some(SkipReason::NoCandidates)),
        Some(Selection::OpenString {
            string_index,
            target,
        }) => (
            Some(BindingDecision {
                frame_id,
                string_index,
                target_point: target,
                finger: None,
            }),
            None,
        ),
        Some(Selection::Pressed {
            string_index,
            target,
        }) => {
            let finger = bind_finger(&target, hand, &config.binding);
            (
                Some(BindingDecision {
                    frame_id,
                    string_index,
                    target_point: target,
                    finger: Some(finger),
                }),
                None,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn skeleton() -> HandSkeleton {
        HandSkeleton::default_adult()
    }

    fn flexed_pose(rng: &mut impl Rng, skeleton: &HandSkeleton) -> HandPose {
        let mut pose = HandPose::identity();
        pose.wrist_rotation = UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )),
            rng.gen::<f64>() * 2.0,
        );
        pose.wrist_translation = Vector3::new(rng.gen(), rng.gen(), rng.gen());
        for j in 0..JOINT_COUNT {
            if skeleton.is_articulated(j) {
                let axis = skeleton.flexion_axis(j).unwrap();
                pose.set_local_rotation(
                    j,
                    UnitQuaternion::from_axis_angle(&axis, rng.gen::<f64>() * 1.2),
                );
            }
        }
        pose
    }

    #[test]
    fn fit_pose_round_trips_through_fk() {
        let skeleton = skeleton();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let truth = flexed_pose(&mut rng, &skeleton);
            let joints = forward_kinematics(&skeleton, &truth);
            let fitted = fit_pose_to_joints(&joints, &skeleton).unwrap();
            let refit = forward_kinematics(&skeleton, &fitted);
            for j in 0..JOINT_COUNT {
                assert!(
                    (refit[j] - joints[j]).norm() < 1e-6,
                    "joint {j} off by {}",
                    (refit[j] - joints[j]).norm()
                );
            }
        }
    }

    #[test]
    fn fit_pose_rest_gives_identity_locals() {
        let skeleton = skeleton();
        let joints = forward_kinematics(&skeleton, &HandPose::identity());
        let fitted = fit_pose_to_joints(&joints, &skeleton).unwrap();
        for j in 0..JOINT_COUNT {
            assert!(
                fitted.local_rotation(j).angle() < 1e-9,
                "joint {j} should stay at rest"
            );
        }
        assert!(fitted.wrist_rotation.angle() < 1e-9);
        assert!(fitted.wrist_translation.norm() < 1e-12);
    }

    #[test]
    fn fit_pose_rejects_collapsed_joints() {
        let skeleton = skeleton();
        let joints = [Point3::origin(); JOINT_COUNT];
        assert!(matches!(
            fit_pose_to_joints(&joints, &skeleton),
            Err(PipelineError::ImplausibleHand { .. })
        ));
    }
}
