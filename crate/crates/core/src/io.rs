//! File formats: camera calibration, per-view keypoints, hand skeleton,
//! instrument and pipeline configuration, scene output, and ground truth.
//! Loaders validate eagerly and name the offending file and field in every
//! diagnostic.
//!
//! Calibration (JSON): an array of cameras, each
//! `{id, fx, fy, cx, cy, width, height, rotation: [9 numbers, row-major,
//! world-to-camera], translation: [3 numbers, meters]}`. A `distortion`
//! field is accepted and ignored, reserved for forward compatibility.
//!
//! Keypoints (JSON): `{fps, frames: [{frame_id, views: [{view_id,
//! keypoints: {name: [u, v, confidence]}, hand_left_rot6d: [[6 numbers] x
//! 15]?}], facing: [3 numbers]?}]}`. Keypoint names are free-form; the hand,
//! instrument, bow, and body groups use the reserved names documented on the
//! pipeline module.
//!
//! Skeleton (JSON): `{palm_facing: [3 numbers], joints: [{name, parent,
//! bone_length, rest_direction: [3 numbers]} x 21]}` in the standard joint
//! order; the wrist's parent is null and its bone fields are ignored.

use crate::audio::PitchTrack;
use crate::config::{InstrumentConfig, PipelineConfig};
use crate::geometry::{Camera, CameraIntrinsics, CameraPose, CameraRig};
use crate::kinematics::{HandSkeleton, Rotation6D, JOINT_COUNT, JOINT_NAMES};
use crate::pipeline::{FrameObservations, Keypoint2D, SceneOutput, ViewObservations};
use crate::synth::{GroundTruthFrame, GroundTruthScene};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: field {field}: {message}")]
    Field {
        path: String,
        field: String,
        message: String,
    },
}

fn read_error(path: &Path, source: std::io::Error) -> IoError {
    IoError::Read {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, message: impl ToString) -> IoError {
    IoError::Malformed {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn field_error(path: &Path, field: impl Into<String>, message: impl ToString) -> IoError {
    IoError::Field {
        path: path.display().to_string(),
        field: field.into(),
        message: message.to_string(),
    }
}

// ---- calibration ----

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    id: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major world-to-camera rotation.
    rotation: Vec<f64>,
    translation: Vec<f64>,
    /// Reserved; accepted and ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distortion: Option<Vec<f64>>,
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CameraRig, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| malformed(path, e))?;
    let mut cameras = Vec::with_capacity(records.len());
    for record in records {
        let camera_field = |field: &str| format!("cameras[{}].{}", record.id, field);
        let intrinsics = CameraIntrinsics::new(
            record.fx,
            record.fy,
            record.cx,
            record.cy,
            record.width,
            record.height,
        )
        .map_err(|e| field_error(path, camera_field("fx..cy"), e))?;
        if record.rotation.len() != 9 {
            return Err(field_error(
                path,
                camera_field("rotation"),
                format!("expected 9 numbers, got {}", record.rotation.len()),
            ));
        }
        if record.translation.len() != 3 {
            return Err(field_error(
                path,
                camera_field("translation"),
                format!("expected 3 numbers, got {}", record.translation.len()),
            ));
        }
        let rotation = Matrix3::from_row_slice(&record.rotation);
        let translation =
            Vector3::new(record.translation[0], record.translation[1], record.translation[2]);
        let pose = CameraPose::new(rotation, translation)
            .map_err(|e| field_error(path, camera_field("rotation"), e))?;
        if record.distortion.as_ref().is_some_and(|d| d.iter().any(|k| *k != 0.0)) {
            // Reserved field: a nonzero model would silently change geometry.
            return Err(field_error(
                path,
                camera_field("distortion"),
                "nonzero distortion is not supported",
            ));
        }
        cameras.push((record.id, Camera::new(intrinsics, pose)));
    }
    CameraRig::new(cameras).map_err(|e| malformed(path, e))
}

pub fn save_calibration(path: impl AsRef<Path>, rig: &CameraRig) -> Result<(), IoError> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = rig
        .iter()
        .map(|(id, camera)| CameraRecord {
            id: id.clone(),
            fx: camera.intrinsics.fx,
            fy: camera.intrinsics.fy,
            cx: camera.intrinsics.cx,
            cy: camera.intrinsics.cy,
            width: camera.intrinsics.image_width,
            height: camera.intrinsics.image_height,
            rotation: camera.pose.rotation().iter_rows(),
            translation: camera.pose.translation().iter().copied().collect(),
            distortion: None,
        })
        .collect();
    write_json(path, &records)
}

trait RowMajor {
    fn iter_rows(&self) -> Vec<f64>;
}

impl RowMajor for Matrix3<f64> {
    fn iter_rows(&self) -> Vec<f64> {
        (0..3).flat_map(|r| (0..3).map(move |c| self[(r, c)])).collect()
    }
}

// ---- keypoints ----

#[derive(Debug, Serialize, Deserialize)]
struct KeypointFile {
    fps: f64,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame_id: usize,
    views: Vec<ViewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    facing: Option<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViewRecord {
    view_id: String,
    keypoints: BTreeMap<String, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hand_left_rot6d: Option<Vec<[f64; 6]>>,
}

/// Load per-view keypoints. Returns the frame series and the declared fps.
pub fn load_keypoints(path: impl AsRef<Path>) -> Result<(Vec<FrameObservations>, f64), IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    let file: KeypointFile = serde_json::from_str(&text).map_err(|e| malformed(path, e))?;
    if !(file.fps > 0.0) {
        return Err(field_error(path, "fps", "must be positive"));
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    for frame in file.frames {
        let mut views = Vec::with_capacity(frame.views.len());
        for view in frame.views {
            let mut keypoints = BTreeMap::new();
            for (name, value) in view.keypoints {
                let [u, v, confidence] = value;
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(field_error(
                        path,
                        format!("frames[{}].views[{}].keypoints[{name}]", frame.frame_id, view.view_id),
                        format!("confidence {confidence} outside [0, 1]"),
                    ));
                }
                keypoints.insert(
                    name,
                    Keypoint2D {
                        position: Vector2::new(u, v),
                        confidence,
                    },
                );
            }
            let hand_rotations_6d = match view.hand_left_rot6d {
                None => None,
                Some(rows) => {
                    if rows.len() != 15 {
                        return Err(field_error(
                            path,
                            format!("frames[{}].views[{}].hand_left_rot6d", frame.frame_id, view.view_id),
                            format!("expected 15 rows, got {}", rows.len()),
                        ));
                    }
                    Some(rows.into_iter().map(Rotation6D).collect())
                }
            };
            views.push(ViewObservations {
                view_id: view.view_id,
                keypoints,
                hand_rotations_6d,
            });
        }
        frames.push(FrameObservations {
            frame_id: frame.frame_id,
            views,
            facing: frame.facing.map(Vector3::from),
        });
    }
    Ok((frames, file.fps))
}

pub fn save_keypoints(
    path: impl AsRef<Path>,
    frames: &[FrameObservations],
    fps: f64,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = KeypointFile {
        fps,
        frames: frames
            .iter()
            .map(|frame| FrameRecord {
                frame_id: frame.frame_id,
                views: frame
                    .views
                    .iter()
                    .map(|view| ViewRecord {
                        view_id: view.view_id.clone(),
                        keypoints: view
                            .keypoints
                            .iter()
                            .map(|(name, kp)| {
                                (name.clone(), [kp.position.x, kp.position.y, kp.confidence])
                            })
                            .collect(),
                        hand_left_rot6d: view
                            .hand_rotations_6d
                            .as_ref()
                            .map(|rows| rows.iter().map(|r| r.0).collect()),
                    })
                    .collect(),
                facing: frame.facing.map(|f| [f.x, f.y, f.z]),
            })
            .collect(),
    };
    write_json(path, &file)
}

// ---- skeleton ----

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    #[serde(default = "default_palm_facing")]
    palm_facing: [f64; 3],
    joints: Vec<JointRecord>,
}

fn default_palm_facing() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

#[derive(Debug, Serialize, Deserialize)]
struct JointRecord {
    name: String,
    parent: Option<String>,
    #[serde(default)]
    bone_length: f64,
    #[serde(default)]
    rest_direction: [f64; 3],
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<HandSkeleton, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| malformed(path, e))?;
    if file.joints.len() != JOINT_COUNT {
        return Err(field_error(
            path,
            "joints",
            format!("expected {JOINT_COUNT} joints, got {}", file.joints.len()),
        ));
    }
    let index_of = |name: &str| file.joints.iter().position(|j| j.name == name);
    let mut parents = [None; JOINT_COUNT];
    let mut lengths = [0.0; JOINT_COUNT];
    let mut directions = [[0.0; 3]; JOINT_COUNT];
    for (j, joint) in file.joints.iter().enumerate() {
        parents[j] = match &joint.parent {
            None => None,
            Some(parent_name) => Some(index_of(parent_name).ok_or_else(|| {
                field_error(
                    path,
                    format!("joints[{}].parent", joint.name),
                    format!("unknown joint {parent_name:?}"),
                )
            })?),
        };
        lengths[j] = joint.bone_length;
        directions[j] = joint.rest_direction;
    }
    HandSkeleton::new(parents, lengths, directions, file.palm_facing)
        .map_err(|e| malformed(path, e))
}

pub fn save_skeleton(path: impl AsRef<Path>, skeleton: &HandSkeleton) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = SkeletonFile {
        palm_facing: {
            let p = skeleton.palm_facing().into_inner();
            [p.x, p.y, p.z]
        },
        joints: (0..JOINT_COUNT)
            .map(|j| JointRecord {
                name: JOINT_NAMES[j].to_string(),
                parent: skeleton.parent(j).map(|p| JOINT_NAMES[p].to_string()),
                bone_length: skeleton.bone_length(j),
                rest_direction: {
                    let d = skeleton.rest_direction(j).into_inner();
                    if j == 0 {
                        [0.0; 3]
                    } else {
                        [d.x, d.y, d.z]
                    }
                },
            })
            .collect(),
    };
    write_json(path, &file)
}

// ---- configs ----

/// Load a pipeline config from TOML or JSON, keyed on the extension.
pub fn load_pipeline_config(path: impl AsRef<Path>) -> Result<PipelineConfig, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| malformed(path, e))
    } else {
        serde_json::from_str(&text).map_err(|e| malformed(path, e))
    }
}

pub fn load_instrument_config(path: impl AsRef<Path>) -> Result<InstrumentConfig, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| malformed(path, e))
    } else {
        serde_json::from_str(&text).map_err(|e| malformed(path, e))
    }
}

pub fn save_instrument_config(
    path: impl AsRef<Path>,
    config: &InstrumentConfig,
) -> Result<(), IoError> {
    write_json(path.as_ref(), config)
}

// ---- scene output / ground truth ----

pub fn save_scene_output(path: impl AsRef<Path>, output: &SceneOutput) -> Result<(), IoError> {
    write_json(path.as_ref(), output)
}

pub fn load_scene_output(path: impl AsRef<Path>) -> Result<SceneOutput, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e))
}

/// Serializable ground-truth payload (the scene minus bulky audio/rig data,
/// which ship as their own files).
#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub fps: f64,
    pub frames: Vec<GroundTruthFrame>,
}

pub fn save_ground_truth(path: impl AsRef<Path>, scene: &GroundTruthScene) -> Result<(), IoError> {
    let file = GroundTruthFile {
        fps: scene.fps,
        frames: scene.frames.clone(),
    };
    write_json(path.as_ref(), &file)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthFile, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| read_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e))
}

pub fn save_pitch_track(path: impl AsRef<Path>, track: &PitchTrack) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut buffer = Vec::new();
    track
        .write_csv(&mut buffer)
        .map_err(|e| malformed(path, e))?;
    fs::write(path, buffer).map_err(|e| read_error(path, e))
}

pub fn load_pitch_track(path: impl AsRef<Path>, fps: f64) -> Result<PitchTrack, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| read_error(path, e))?;
    PitchTrack::read_csv(std::io::BufReader::new(file), fps).map_err(|e| malformed(path, e))
}

/// Per-keypoint CSV track of a scene: one row per (frame, keypoint).
pub fn save_points_csv(path: impl AsRef<Path>, output: &SceneOutput) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = String::from("frame,keypoint,x,y,z,inlier_views,mean_reprojection_error_px\n");
    for frame in &output.frames {
        for (name, point) in &frame.points {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                frame.frame_id,
                name,
                point.position.x,
                point.position.y,
                point.position.z,
                point.inlier_views.len(),
                point.mean_reprojection_error
            ));
        }
    }
    fs::write(path, text).map_err(|e| read_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| malformed(path, e))?;
    fs::write(path, text).map_err(|e| read_error(path, e))
}
