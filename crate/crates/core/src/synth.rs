//! Synthetic-performance oracle: a virtual instrument, a camera ring, hand
//! trajectories whose note-playing fingertip touches the string exactly, and
//! harmonic audio whose pitch matches the fingertip position through the
//! vibrating-length relation. Noise models (pixel noise, outlier
//! substitutions, hand flexion noise) corrupt the observations while the
//! ground truth stays clean, so every pipeline stage can be verified at desk
//! scale.

use crate::audio::AudioBuffer;
use crate::config::InstrumentConfig;
use crate::geometry::{Camera, CameraIntrinsics, CameraPose, CameraRig};
use crate::instrument::{build_strings, position_on_string, InstrumentModel};
use crate::kinematics::{
    forward_kinematics, forward_kinematics_local, Finger, HandPose, HandSkeleton, Rotation6D,
    ARTICULATED_JOINTS,
};
use crate::pipeline::{
    hand_keypoint_name, FrameObservations, Keypoint2D, SceneInput, SyncInfo, ViewObservations,
    BODY_SHOULDER_L, BODY_SHOULDER_R, BOW_TIP, BRIDGE_L, BRIDGE_R, FROG, NUT_L, NUT_R,
};
use crate::seeding::derive_seed;
use nalgebra::{Matrix3, Point3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {message}{}", note.map(|n| format!(" (note {n})")).unwrap_or_default())]
    InvalidConfig {
        note: Option<usize>,
        message: String,
    },
}

fn config_error(note: Option<usize>, message: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig {
        note,
        message: message.into(),
    }
}

/// One note of the synthetic performance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoteSpec {
    pub string_index: usize,
    /// Vibrating length as a fraction of the fundamental length, in (0, 1].
    /// A fraction of 1 is an open string: the hand hovers clear of the board.
    pub length_fraction: f64,
    pub duration_frames: usize,
    pub vibrato: bool,
    /// The finger that stops the note.
    pub finger: Finger,
}

impl NoteSpec {
    pub fn new(string_index: usize, length_fraction: f64, duration_frames: usize) -> Self {
        Self {
            string_index,
            length_fraction,
            duration_frames,
            vibrato: false,
            finger: Finger::Index,
        }
    }

    pub fn with_vibrato(mut self) -> Self {
        self.vibrato = true;
        self
    }

    pub fn with_finger(mut self, finger: Finger) -> Self {
        self.finger = finger;
        self
    }

    fn is_open(&self) -> bool {
        self.length_fraction >= 0.999
    }
}

/// Scene generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub instrument: InstrumentConfig,
    pub notes: Vec<NoteSpec>,
    pub camera_count: usize,
    /// Camera ring radius, meters (the capture cylinder is twice this
    /// across).
    pub ring_radius_m: f64,
    pub fps: f64,
    pub sample_rate: u32,
    /// Silent frames before the first note.
    pub lead_in_frames: usize,
    /// Video frame of the synchronization clap burst, within the lead-in.
    pub clap_frame: Option<usize>,
    /// Gaussian keypoint noise, pixels.
    pub keypoint_noise_px: f64,
    /// Probability that a view's keypoint is replaced by a uniform random
    /// in-image point.
    pub outlier_fraction: f64,
    /// Gaussian noise on the PIP/DIP flexion angles of the observed hand,
    /// radians.
    pub pose_noise_rad: f64,
    /// Emit per-view 6D joint rotations (the fused-rotation input path).
    pub emit_view_rotations: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            instrument: InstrumentConfig::cello(),
            notes: demo_notes(),
            camera_count: 12,
            ring_radius_m: 2.0,
            fps: 30.0,
            sample_rate: 44100,
            lead_in_frames: 15,
            clap_frame: Some(6),
            keypoint_noise_px: 0.0,
            outlier_fraction: 0.0,
            pose_noise_rad: 0.0,
            emit_view_rotations: false,
            seed: 0,
        }
    }
}

/// A short demo phrase: stopped notes on every string, one open string, one
/// vibrato note.
fn demo_notes() -> Vec<NoteSpec> {
    vec![
        NoteSpec::new(3, 0.667, 30),
        NoteSpec::new(3, 0.75, 30).with_finger(Finger::Middle),
        NoteSpec::new(2, 0.8, 30),
        NoteSpec::new(2, 0.667, 30).with_vibrato().with_finger(Finger::Ring),
        NoteSpec::new(1, 0.9, 30),
        NoteSpec::new(3, 1.0, 30),
        NoteSpec::new(0, 0.75, 30).with_finger(Finger::Little),
        NoteSpec::new(3, 0.6, 30).with_vibrato(),
    ]
}

/// Ground truth for one frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame_id: usize,
    /// True hand joints, 21 entries.
    pub joints: Vec<Point3<f64>>,
    pub pitch_hz: Option<f64>,
    pub string_index: Option<usize>,
    pub finger: Option<Finger>,
    /// True fingerboard contact point (the stopped position), absent on open
    /// strings and silence.
    pub target: Option<Point3<f64>>,
    pub open_string: bool,
    /// Every true named keypoint (instrument, bow, body, hand).
    pub keypoints: BTreeMap<String, Point3<f64>>,
}

/// A complete synthetic scene: clean ground truth plus corrupted
/// observations.
#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    pub rig: CameraRig,
    pub skeleton: HandSkeleton,
    pub instrument_config: InstrumentConfig,
    pub instrument: InstrumentModel,
    pub fps: f64,
    pub frames: Vec<GroundTruthFrame>,
    pub audio: AudioBuffer,
    pub observations: Vec<FrameObservations>,
    pub clap_video_frame: Option<usize>,
}

impl GroundTruthScene {
    /// Package the corrupted observations as pipeline input.
    pub fn scene_input(&self) -> SceneInput {
        SceneInput {
            rig: self.rig.clone(),
            frames: self.observations.clone(),
            audio: crate::pipeline::AudioSource::Wav(self.audio.clone()),
            instrument: self.instrument_config.clone(),
            skeleton: self.skeleton.clone(),
            sync: SyncInfo {
                clap_video_frame: self.clap_video_frame,
                clap_sample: None,
            },
            fps: self.fps,
        }
    }
}

const VIBRATO_DEPTH_CENTS: f64 = 25.0;
const VIBRATO_RATE_HZ: f64 = 6.0;
const HARMONIC_AMPLITUDES: [f64; 5] = [0.3, 0.15, 0.075, 0.0375, 0.01875];
const ATTACK_SECONDS: f64 = 0.02;
const RELEASE_SECONDS: f64 = 0.02;
/// Hover clearance of the hand over the board on open strings, meters.
const HOVER_CLEARANCE: f64 = 0.05;

/// Frame-rate camera intrinsics mirroring a 2656x2300 machine-vision sensor.
fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(1800.0, 1800.0, 1328.0, 1150.0, 2656, 2300).expect("valid intrinsics")
}

/// Cameras evenly spaced on a ring, all aimed at the performer.
pub fn camera_ring(count: usize, radius: f64, target: Point3<f64>) -> CameraRig {
    let cameras = (0..count).map(|k| {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
        let eye = Point3::new(radius * theta.cos(), radius * theta.sin(), 1.3);
        let pose = CameraPose::look_at(eye, target, Vector3::z()).expect("ring pose");
        (format!("cam{k:02}"), Camera::new(default_intrinsics(), pose))
    });
    CameraRig::new(cameras).expect("distinct ids")
}

/// Static placement of the virtual instrument and performer.
struct StageLayout {
    instrument: InstrumentModel,
    nut_l: Point3<f64>,
    nut_r: Point3<f64>,
    bridge_l: Point3<f64>,
    bridge_r: Point3<f64>,
    shoulder_l: Point3<f64>,
    shoulder_r: Point3<f64>,
    /// Direction the fingertip presses (into the board).
    press_dir: Vector3<f64>,
    /// Wrist orientation of the stopping hand.
    wrist_rotation: UnitQuaternion<f64>,
}

fn stage_layout(config: &InstrumentConfig) -> StageLayout {
    let length = config.fundamental_length();
    let bridge_center = Point3::new(0.10, 0.0, 0.90);
    let string_up = Vector3::new(-0.20, 0.0, 0.98).normalize();
    let nut_center = bridge_center + length * string_up;
    let across = Vector3::y();
    let nut_l = nut_center - across * (config.nut_width() / 2.0);
    let nut_r = nut_center + across * (config.nut_width() / 2.0);
    let bridge_l = bridge_center - across * (config.bridge_width() / 2.0);
    let bridge_r = bridge_center + across * (config.bridge_width() / 2.0);
    let instrument = build_strings(
        nut_l,
        nut_r,
        bridge_l,
        bridge_r,
        config.tunings(),
        config.spacing_fractions,
        config.string_names(),
        0,
    )
    .expect("static layout is well-formed");

    // The board faces the performer on the -x side; the hand presses toward
    // +x. The hand frame runs fingers across the strings (-y), knuckle line
    // up the neck, palm toward the board.
    let board_normal = string_up.cross(&across).normalize(); // (-0.98, 0, -0.2)-ish
    let press_dir = -board_normal;
    let hand_x = -across;
    let hand_z = board_normal;
    let hand_y = hand_z.cross(&hand_x);
    let wrist_rotation = UnitQuaternion::from_rotation_matrix(
        &nalgebra::Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
            hand_x, hand_y, hand_z,
        ])),
    );

    StageLayout {
        instrument,
        nut_l,
        nut_r,
        bridge_l,
        bridge_r,
        shoulder_l: Point3::new(-0.35, 0.18, 1.35),
        shoulder_r: Point3::new(-0.35, -0.18, 1.35),
        press_dir,
        wrist_rotation,
    }
}

/// Nominal flexion of the stopping hand. The note-playing finger curls
/// deeper than the others, which hover lifted off the board.
fn stopping_pose(skeleton: &HandSkeleton, layout: &StageLayout, designated: Finger) -> HandPose {
    let mut pose = HandPose::identity();
    pose.wrist_rotation = layout.wrist_rotation;
    for finger in Finger::ALL {
        let (mcp_like, pip, dip) = {
            let (pip, dip) = finger.flex_joints();
            (pip - 1, pip, dip)
        };
        let (a_mcp, a_pip, a_dip) = if finger == Finger::Thumb {
            (0.2, 0.3, 0.2)
        } else if finger == designated {
            (0.5, 0.6, 0.3)
        } else {
            (0.2, 0.45, 0.25)
        };
        for (joint, angle) in [(mcp_like, a_mcp), (pip, a_pip), (dip, a_dip)] {
            let axis = skeleton.flexion_axis(joint).expect("standard layout");
            pose.set_local_rotation(joint, UnitQuaternion::from_axis_angle(&axis, angle));
        }
    }
    pose
}

/// Place the wrist so the designated fingertip lands exactly on `target`.
fn place_hand(
    skeleton: &HandSkeleton,
    layout: &StageLayout,
    designated: Finger,
    target: Point3<f64>,
) -> HandPose {
    let mut pose = stopping_pose(skeleton, layout, designated);
    let tip_local = forward_kinematics_local(skeleton, &pose)[designated.tip()];
    pose.wrist_translation = target.coords - (layout.wrist_rotation * tip_local.coords);
    pose
}

struct FramePlan {
    pitch_hz: Option<f64>,
    note_index: Option<usize>,
    target: Option<Point3<f64>>,
    pose: HandPose,
    bow_contact: Option<(usize, Point3<f64>)>,
    time_in_note: f64,
}

/// Generate a complete scene from the configuration. Generation is
/// deterministic for a fixed seed; per-frame noise derives independent
/// substreams, so frame order does not matter.
pub fn generate_scene(config: &SynthConfig) -> Result<GroundTruthScene, SynthError> {
    if config.notes.is_empty() {
        return Err(config_error(None, "note sequence is empty"));
    }
    if config.camera_count < 2 {
        return Err(config_error(None, "need at least two cameras"));
    }
    if !(config.fps > 0.0) {
        return Err(config_error(None, "fps must be positive"));
    }
    if !(0.0..1.0).contains(&config.outlier_fraction) {
        return Err(config_error(None, "outlier fraction must lie in [0, 1)"));
    }
    for (i, note) in config.notes.iter().enumerate() {
        if note.string_index >= 4 {
            return Err(config_error(Some(i), "string index out of range"));
        }
        if !(note.length_fraction > 0.0 && note.length_fraction <= 1.0) {
            return Err(config_error(Some(i), "length fraction must lie in (0, 1]"));
        }
        if note.duration_frames == 0 {
            return Err(config_error(Some(i), "duration must be at least one frame"));
        }
    }
    if let Some(clap) = config.clap_frame {
        if clap >= config.lead_in_frames {
            return Err(config_error(
                None,
                "clap frame must fall inside the lead-in silence",
            ));
        }
    }

    let skeleton = HandSkeleton::default_adult();
    let layout = stage_layout(&config.instrument);
    let rig = camera_ring(
        config.camera_count,
        config.ring_radius_m,
        Point3::new(-0.1, 0.0, 1.2),
    );

    let total_frames: usize =
        config.lead_in_frames + config.notes.iter().map(|n| n.duration_frames).sum::<usize>();

    // Per-frame plan: true pitch, target, pose, bow.
    let mut plans: Vec<FramePlan> = Vec::with_capacity(total_frames);
    let first_target = note_base_target(&layout.instrument, &config.notes[0]);
    for frame in 0..config.lead_in_frames {
        let hover = first_target - layout.press_dir * HOVER_CLEARANCE;
        plans.push(FramePlan {
            pitch_hz: None,
            note_index: None,
            target: None,
            pose: place_hand(&skeleton, &layout, config.notes[0].finger, hover),
            bow_contact: None,
            time_in_note: frame as f64 / config.fps,
        });
    }
    let mut note_start = config.lead_in_frames;
    for (note_index, note) in config.notes.iter().enumerate() {
        let string = layout.instrument.string(note.string_index);
        let base_length = note.length_fraction * string.fundamental_length;
        let base_pitch = string.fundamental_hz * string.fundamental_length / base_length;
        for k in 0..note.duration_frames {
            let frame = note_start + k;
            let t_in_note = k as f64 / config.fps;
            let cents = if note.vibrato {
                VIBRATO_DEPTH_CENTS
                    * (2.0 * std::f64::consts::PI * VIBRATO_RATE_HZ * t_in_note).sin()
            } else {
                0.0
            };
            let pitch = base_pitch * 2f64.powf(cents / 1200.0);
            let length = string.fundamental_hz * string.fundamental_length / pitch;
            let stop = position_on_string(string, length.min(string.fundamental_length))
                .expect("length within range");
            let (pose, target) = if note.is_open() {
                let hover = stop - layout.press_dir * HOVER_CLEARANCE;
                (place_hand(&skeleton, &layout, note.finger, hover), None)
            } else {
                (
                    place_hand(&skeleton, &layout, note.finger, stop),
                    Some(stop),
                )
            };
            let bow_point = position_on_string(string, 0.10 * string.fundamental_length)
                .expect("bow contact on string");
            plans.push(FramePlan {
                pitch_hz: Some(pitch),
                note_index: Some(note_index),
                target,
                pose,
                bow_contact: Some((note.string_index, bow_point)),
                time_in_note: t_in_note,
            });
            let _ = frame;
        }
        note_start += note.duration_frames;
    }

    let audio = synthesize_audio(config, &plans)?;

    // True keypoints, observations, ground truth.
    let mut frames = Vec::with_capacity(total_frames);
    let mut observations = Vec::with_capacity(total_frames);
    for (frame_id, plan) in plans.iter().enumerate() {
        let joints = forward_kinematics(&skeleton, &plan.pose);
        let mut keypoints: BTreeMap<String, Point3<f64>> = BTreeMap::new();
        for (j, p) in joints.iter().enumerate() {
            keypoints.insert(hand_keypoint_name(j), *p);
        }
        keypoints.insert(NUT_L.into(), layout.nut_l);
        keypoints.insert(NUT_R.into(), layout.nut_r);
        keypoints.insert(BRIDGE_L.into(), layout.bridge_l);
        keypoints.insert(BRIDGE_R.into(), layout.bridge_r);
        keypoints.insert(BODY_SHOULDER_L.into(), layout.shoulder_l);
        keypoints.insert(BODY_SHOULDER_R.into(), layout.shoulder_r);
        if let Some((string_index, contact)) = plan.bow_contact {
            let (frog, tip) = bow_line(&layout, string_index, contact, plan.time_in_note);
            keypoints.insert(FROG.into(), frog);
            keypoints.insert(BOW_TIP.into(), tip);
        }

        // The observed (vision) hand: the true pose with flexion noise.
        let observed_pose = if config.pose_noise_rad > 0.0 {
            perturb_pose(&plan.pose, &skeleton, config, frame_id)
        } else {
            plan.pose.clone()
        };
        let observed_joints = forward_kinematics(&skeleton, &observed_pose);
        let mut observed_keypoints = keypoints.clone();
        for (j, p) in observed_joints.iter().enumerate() {
            observed_keypoints.insert(hand_keypoint_name(j), *p);
        }

        observations.push(project_observations(
            config,
            &rig,
            &observed_pose,
            &observed_keypoints,
            frame_id,
        ));

        let note = plan.note_index.map(|i| &config.notes[i]);
        frames.push(GroundTruthFrame {
            frame_id,
            joints: joints.to_vec(),
            pitch_hz: plan.pitch_hz,
            string_index: note.map(|n| n.string_index),
            finger: note.and_then(|n| (!n.is_open()).then_some(n.finger)),
            target: plan.target,
            open_string: note.map(|n| n.is_open()).unwrap_or(false),
            keypoints,
        });
    }

    Ok(GroundTruthScene {
        rig,
        skeleton,
        instrument_config: config.instrument.clone(),
        instrument: layout.instrument.clone(),
        fps: config.fps,
        frames,
        audio,
        observations,
        clap_video_frame: config.clap_frame,
    })
}

fn note_base_target(instrument: &InstrumentModel, note: &NoteSpec) -> Point3<f64> {
    let string = instrument.string(note.string_index);
    position_on_string(string, note.length_fraction * string.fundamental_length)
        .expect("fraction in (0, 1]")
}

/// Bow line through the contact point, mostly across the strings with a
/// slight out-of-plane tilt, with the frog sawing back and forth.
fn bow_line(
    layout: &StageLayout,
    _string_index: usize,
    contact: Point3<f64>,
    t: f64,
) -> (Point3<f64>, Point3<f64>) {
    let dir = (Vector3::y() + layout.press_dir * 0.15).normalize();
    let stroke = 0.35 + 0.15 * (2.0 * std::f64::consts::PI * 0.8 * t).sin();
    let frog = contact - dir * stroke;
    let tip = frog + dir * 0.75;
    (frog, tip)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Flexion noise on the PIP and DIP joints of the four fingers, clamped to
/// the anthropometric range.
fn perturb_pose(
    pose: &HandPose,
    skeleton: &HandSkeleton,
    config: &SynthConfig,
    frame_id: usize,
) -> HandPose {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        "pose-noise",
        frame_id as u64,
    ));
    let mut noisy = pose.clone();
    for finger in &Finger::ALL[1..] {
        let (pip, dip) = finger.flex_joints();
        for (joint, max_angle) in [(pip, 110f64.to_radians()), (dip, 90f64.to_radians())] {
            let axis = skeleton.flexion_axis(joint).expect("standard layout");
            // The nominal pose is pure flexion, so the twist angle is the
            // rotation angle about the axis.
            let current = noisy.local_rotation(joint).angle();
            let jitter = gaussian(&mut rng) * config.pose_noise_rad;
            let angle = (current + jitter).clamp(0.0, max_angle);
            noisy.set_local_rotation(joint, UnitQuaternion::from_axis_angle(&axis, angle));
        }
    }
    noisy
}

/// Project the observed keypoints into every camera, adding pixel noise and
/// outlier substitutions, and optionally attach per-view joint rotations.
fn project_observations(
    config: &SynthConfig,
    rig: &CameraRig,
    observed_pose: &HandPose,
    observed_keypoints: &BTreeMap<String, Point3<f64>>,
    frame_id: usize,
) -> FrameObservations {
    let mut views = Vec::with_capacity(rig.len());
    for (view_id, camera) in rig.iter() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &format!("observe:{view_id}"),
            frame_id as u64,
        ));
        let mut keypoints = BTreeMap::new();
        for (name, point) in observed_keypoints {
            let Ok(mut px) = camera.project(point) else {
                continue;
            };
            if config.outlier_fraction > 0.0 && rng.gen::<f64>() < config.outlier_fraction {
                px.x = rng.gen::<f64>() * camera.intrinsics.image_width as f64;
                px.y = rng.gen::<f64>() * camera.intrinsics.image_height as f64;
            } else if config.keypoint_noise_px > 0.0 {
                px.x += gaussian(&mut rng) * config.keypoint_noise_px;
                px.y += gaussian(&mut rng) * config.keypoint_noise_px;
            }
            keypoints.insert(name.clone(), Keypoint2D {
                position: px,
                confidence: 0.9,
            });
        }
        let hand_rotations_6d = config.emit_view_rotations.then(|| {
            ARTICULATED_JOINTS
                .iter()
                .map(|&joint| {
                    let mut q = *observed_pose.local_rotation(joint);
                    // Small independent per-view disagreement.
                    let axis = Unit::new_normalize(Vector3::new(
                        gaussian(&mut rng),
                        gaussian(&mut rng),
                        gaussian(&mut rng),
                    ));
                    q = UnitQuaternion::from_axis_angle(&axis, gaussian(&mut rng) * 0.02) * q;
                    Rotation6D::from_quaternion(&q)
                })
                .collect()
        });
        views.push(ViewObservations {
            view_id: view_id.clone(),
            keypoints,
            hand_rotations_6d,
        });
    }
    FrameObservations {
        frame_id,
        views,
        facing: None,
    }
}

/// Five-harmonic tone following the per-frame pitch plan, with per-note
/// attack/release ramps, continuous phase, and an optional clap burst in the
/// lead-in.
fn synthesize_audio(config: &SynthConfig, plans: &[FramePlan]) -> Result<AudioBuffer, SynthError> {
    let sr = config.sample_rate as f64;
    let total_samples = (plans.len() as f64 / config.fps * sr).round() as usize;
    let mut samples = vec![0.0f32; total_samples];

    let attack = (ATTACK_SECONDS * sr) as usize;
    let release = (RELEASE_SECONDS * sr) as usize;
    let mut phase = 0.0f64;
    let mut previous_note: Option<usize> = None;
    let mut note_started_at = 0usize;

    for i in 0..total_samples {
        let t = i as f64 / sr;
        let frame = ((t * config.fps) as usize).min(plans.len() - 1);
        let plan = &plans[frame];
        if plan.note_index != previous_note {
            previous_note = plan.note_index;
            note_started_at = i;
        }
        let Some(f0) = instantaneous_pitch(config, plans, frame, t) else {
            continue;
        };
        phase += 2.0 * std::f64::consts::PI * f0 / sr;

        // Note-local envelope: where does this note end?
        let note_end = note_end_sample(config, plans, frame, sr, total_samples);
        let since_start = i - note_started_at;
        let until_end = note_end.saturating_sub(i);
        let mut envelope = 1.0f64;
        if since_start < attack {
            envelope *= since_start as f64 / attack as f64;
        }
        if until_end < release {
            envelope *= until_end as f64 / release as f64;
        }

        let mut value = 0.0f64;
        for (k, amp) in HARMONIC_AMPLITUDES.iter().enumerate() {
            value += amp * ((k as f64 + 1.0) * phase).sin();
        }
        samples[i] = (value * envelope) as f32;
    }

    if let Some(clap_frame) = config.clap_frame {
        let start = (clap_frame as f64 / config.fps * sr).round() as usize;
        let burst = (0.01 * sr) as usize;
        let decay = 0.002 * sr;
        for k in 0..burst {
            let idx = start + k;
            if idx >= samples.len() {
                break;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            samples[idx] = (0.9 * sign * (-(k as f64) / decay).exp()) as f32;
        }
    }

    AudioBuffer::new(samples, config.sample_rate)
        .map_err(|e| config_error(None, format!("audio: {e}")))
}

/// Pitch at an exact time, following the vibrato modulation continuously.
fn instantaneous_pitch(
    config: &SynthConfig,
    plans: &[FramePlan],
    frame: usize,
    t: f64,
) -> Option<f64> {
    let plan = &plans[frame];
    let note = &config.notes[plan.note_index?];
    let base = plan.pitch_hz?;
    if !note.vibrato {
        return Some(base);
    }
    // Recover the note-local time from the frame plan and extend it to
    // sample resolution.
    let frame_start_time = frame as f64 / config.fps;
    let t_in_note = plan.time_in_note + (t - frame_start_time);
    let base_pitch = base / 2f64.powf(vibrato_cents(plan.time_in_note) / 1200.0);
    Some(base_pitch * 2f64.powf(vibrato_cents(t_in_note) / 1200.0))
}

fn vibrato_cents(t_in_note: f64) -> f64 {
    VIBRATO_DEPTH_CENTS * (2.0 * std::f64::consts::PI * VIBRATO_RATE_HZ * t_in_note).sin()
}

fn note_end_sample(
    config: &SynthConfig,
    plans: &[FramePlan],
    frame: usize,
    sr: f64,
    total: usize,
) -> usize {
    let note = plans[frame].note_index;
    let mut end_frame = frame;
    while end_frame + 1 < plans.len() && plans[end_frame + 1].note_index == note {
        end_frame += 1;
    }
    (((end_frame + 1) as f64 / config.fps * sr).round() as usize).min(total)
}
