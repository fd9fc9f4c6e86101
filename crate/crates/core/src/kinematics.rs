//! Hand skeleton model, rotation representations, forward kinematics,
//! multi-view rotation fusion, and rigid wrist alignment.
//!
//! The hand is a 21-joint tree in the common whole-body convention: wrist
//! first, then four joints per digit (thumb CMC/MCP/IP/TIP, other fingers
//! MCP/PIP/DIP/TIP). Fifteen of the joints articulate; the wrist carries the
//! global rigid transform and the five tips carry nothing.

use crate::geometry::CameraPose;
use nalgebra::{Matrix3, Point3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of joints in the hand layout.
pub const JOINT_COUNT: usize = 21;

/// Joint names in layout order.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "little_mcp",
    "little_pip",
    "little_dip",
    "little_tip",
];

/// Parent of each joint in the standard layout (wrist is the root).
pub const STANDARD_PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(0),
    Some(5),
    Some(6),
    Some(7),
    Some(0),
    Some(9),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
    Some(15),
    Some(0),
    Some(17),
    Some(18),
    Some(19),
];

pub const WRIST: usize = 0;

/// The 15 joints that carry a local rotation in the standard layout, in
/// index order. External rotation lists (6D per joint) follow this order.
pub const ARTICULATED_JOINTS: [usize; 15] = [1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Little,
    ];

    fn base(self) -> usize {
        match self {
            Finger::Thumb => 1,
            Finger::Index => 5,
            Finger::Middle => 9,
            Finger::Ring => 13,
            Finger::Little => 17,
        }
    }

    pub fn tip(self) -> usize {
        self.base() + 3
    }

    /// The two joints adjusted by the fingertip refinement: PIP and DIP for
    /// the fingers, MCP and IP for the thumb.
    pub fn flex_joints(self) -> (usize, usize) {
        (self.base() + 1, self.base() + 2)
    }
}

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("skeleton is not a tree of {JOINT_COUNT} joints rooted at the wrist: {0}")]
    InvalidSkeleton(String),
    #[error("bone length for joint {joint} must be positive, got {length}")]
    InvalidBoneLength { joint: usize, length: f64 },
    #[error("rest direction for joint {joint} is not normalizable")]
    InvalidRestDirection { joint: usize },
    #[error("degenerate 6d rotation: the two columns are linearly dependent")]
    Degenerate6d,
    #[error("rotation fusion needs at least one strictly positive weight")]
    NoViewWeight,
    #[error("negative fusion weight {0}")]
    NegativeWeight(f64),
    #[error("degenerate correspondence set: need at least three non-collinear points with positive weight")]
    DegenerateCorrespondence,
}

/// First two columns of a rotation matrix, stored column-major
/// `(r00, r10, r20, r01, r11, r21)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    /// Gram-Schmidt reconstruction: normalize the first column, orthogonalize
    /// the second against it, complete with the cross product.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>, KinematicsError> {
        let a = Vector3::new(self.0[0], self.0[1], self.0[2]);
        let b = Vector3::new(self.0[3], self.0[4], self.0[5]);
        let c1 = a.try_normalize(1e-12).ok_or(KinematicsError::Degenerate6d)?;
        let b_perp = b - c1 * c1.dot(&b);
        if b_perp.norm() < 1e-9 * b.norm().max(1e-300) {
            return Err(KinematicsError::Degenerate6d);
        }
        let c2 = b_perp.normalize();
        let c3 = c1.cross(&c2);
        Ok(Matrix3::from_columns(&[c1, c2, c3]))
    }

    pub fn to_quaternion(&self) -> Result<UnitQuaternion<f64>, KinematicsError> {
        let m = self.to_matrix()?;
        Ok(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(m),
        ))
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation6D([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self::from_matrix(q.to_rotation_matrix().matrix())
    }
}

/// See [`Rotation6D::to_matrix`].
pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Matrix3<f64>, KinematicsError> {
    r.to_matrix()
}

/// Hand skeleton: tree topology, bone lengths (meters) and rest directions
/// (unit vectors in the wrist frame) per segment, indexed by the child joint.
///
/// `palm_facing` is the outward normal of the palm surface in the wrist
/// frame; flexion axes are derived from it so that positive flexion curls a
/// segment toward the palm.
#[derive(Debug, Clone)]
pub struct HandSkeleton {
    parents: [Option<usize>; JOINT_COUNT],
    children: [Option<usize>; JOINT_COUNT],
    order: Vec<usize>,
    bone_lengths: [f64; JOINT_COUNT],
    rest_directions: [Unit<Vector3<f64>>; JOINT_COUNT],
    palm_facing: Unit<Vector3<f64>>,
}

impl HandSkeleton {
    pub fn new(
        parents: [Option<usize>; JOINT_COUNT],
        bone_lengths: [f64; JOINT_COUNT],
        rest_directions: [[f64; 3]; JOINT_COUNT],
        palm_facing: [f64; 3],
    ) -> Result<Self, KinematicsError> {
        if parents[WRIST].is_some() {
            return Err(KinematicsError::InvalidSkeleton(
                "the wrist must be the root".into(),
            ));
        }
        let mut children = [None; JOINT_COUNT];
        for (j, parent) in parents.iter().enumerate() {
            let Some(p) = *parent else { continue };
            if p >= JOINT_COUNT || p == j {
                return Err(KinematicsError::InvalidSkeleton(format!(
                    "joint {j} has out-of-range parent {p}"
                )));
            }
            if p != WRIST {
                if children[p].is_some() {
                    return Err(KinematicsError::InvalidSkeleton(format!(
                        "joint {p} has more than one child; digits must be chains"
                    )));
                }
                children[p] = Some(j);
            }
        }

        // Breadth-first order from the wrist; reaching every joint proves the
        // parent map is a tree rooted there.
        let mut order = Vec::with_capacity(JOINT_COUNT);
        let mut frontier = vec![WRIST];
        let mut seen = [false; JOINT_COUNT];
        seen[WRIST] = true;
        while let Some(j) = frontier.pop() {
            order.push(j);
            for (c, parent) in parents.iter().enumerate() {
                if *parent == Some(j) && !seen[c] {
                    seen[c] = true;
                    frontier.push(c);
                }
            }
        }
        if order.len() != JOINT_COUNT {
            return Err(KinematicsError::InvalidSkeleton(format!(
                "{} joints unreachable from the wrist",
                JOINT_COUNT - order.len()
            )));
        }

        let mut dirs = [Unit::new_unchecked(Vector3::x()); JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            if j == WRIST {
                continue;
            }
            let len = bone_lengths[j];
            if !(len > 0.0) || !len.is_finite() {
                return Err(KinematicsError::InvalidBoneLength {
                    joint: j,
                    length: len,
                });
            }
            let v = Vector3::from(rest_directions[j]);
            if (v.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidRestDirection { joint: j });
            }
            dirs[j] = Unit::new_normalize(v);
        }
        let palm = Vector3::from(palm_facing)
            .try_normalize(1e-12)
            .ok_or(KinematicsError::InvalidRestDirection { joint: WRIST })?;

        Ok(Self {
            parents,
            children,
            order,
            bone_lengths,
            rest_directions: dirs,
            palm_facing: Unit::new_unchecked(palm),
        })
    }

    /// Default adult left hand: palm in the wrist xy-plane, fingers fanned
    /// around +x, thumb toward +y, palm facing -z.
    pub fn default_adult() -> Self {
        fn unit(x: f64, y: f64, z: f64) -> [f64; 3] {
            let n = (x * x + y * y + z * z).sqrt();
            [x / n, y / n, z / n]
        }
        let mut lengths = [0.0; JOINT_COUNT];
        let mut dirs = [[1.0, 0.0, 0.0]; JOINT_COUNT];
        let chains: [(Finger, [f64; 4], [f64; 3]); 5] = [
            (Finger::Thumb, [0.032, 0.046, 0.032, 0.025], unit(0.45, 0.893, 0.0)),
            (Finger::Index, [0.092, 0.040, 0.025, 0.023], unit(0.97, 0.243, 0.0)),
            (Finger::Middle, [0.090, 0.045, 0.028, 0.024], unit(1.0, 0.10, 0.0)),
            (Finger::Ring, [0.086, 0.040, 0.027, 0.024], unit(1.0, -0.05, 0.0)),
            (Finger::Little, [0.080, 0.032, 0.021, 0.021], unit(0.97, -0.22, 0.0)),
        ];
        for (finger, lens, dir) in chains {
            let base = finger.base();
            for (k, len) in lens.into_iter().enumerate() {
                lengths[base + k] = len;
                dirs[base + k] = dir;
            }
        }
        // The thumb column bends outward along its chain.
        dirs[2] = unit(0.62, 0.785, 0.0);
        dirs[3] = unit(0.75, 0.661, 0.0);
        dirs[4] = unit(0.85, 0.527, 0.0);
        Self::new(STANDARD_PARENTS, lengths, dirs, [0.0, 0.0, -1.0])
            .expect("default skeleton is valid")
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// The unique child of a non-wrist joint, if any.
    pub fn child(&self, joint: usize) -> Option<usize> {
        self.children[joint]
    }

    pub fn parents(&self) -> &[Option<usize>; JOINT_COUNT] {
        &self.parents
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        self.bone_lengths[joint]
    }

    pub fn rest_direction(&self, joint: usize) -> &Unit<Vector3<f64>> {
        &self.rest_directions[joint]
    }

    pub fn palm_facing(&self) -> &Unit<Vector3<f64>> {
        &self.palm_facing
    }

    /// Joints that carry a local rotation: everything with a child except the
    /// wrist (15 in the standard layout).
    pub fn is_articulated(&self, joint: usize) -> bool {
        joint != WRIST && self.children[joint].is_some()
    }

    /// Flexion axis of an articulated joint in its rest frame: lateral to the
    /// segment it drives, oriented so positive flexion curls toward the palm.
    pub fn flexion_axis(&self, joint: usize) -> Option<Unit<Vector3<f64>>> {
        let child = self.children[joint]?;
        let d = self.rest_directions[child];
        d.cross(&self.palm_facing).try_normalize(1e-9).map(Unit::new_unchecked)
    }
}

/// Hand pose: global wrist transform plus local rotations for the articulated
/// joints. Wrist and fingertip slots always hold the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub wrist_rotation: UnitQuaternion<f64>,
    pub wrist_translation: Vector3<f64>,
    local: [UnitQuaternion<f64>; JOINT_COUNT],
}

impl HandPose {
    pub fn identity() -> Self {
        Self {
            wrist_rotation: UnitQuaternion::identity(),
            wrist_translation: Vector3::zeros(),
            local: [UnitQuaternion::identity(); JOINT_COUNT],
        }
    }

    pub fn local_rotation(&self, joint: usize) -> &UnitQuaternion<f64> {
        &self.local[joint]
    }

    pub fn set_local_rotation(&mut self, joint: usize, rotation: UnitQuaternion<f64>) {
        assert!(
            joint != WRIST && joint < JOINT_COUNT,
            "joint {joint} carries no local rotation"
        );
        self.local[joint] = rotation;
    }
}

impl Default for HandPose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Joint positions in the wrist frame (no global transform applied).
pub fn forward_kinematics_local(
    skeleton: &HandSkeleton,
    pose: &HandPose,
) -> [Point3<f64>; JOINT_COUNT] {
    let mut positions = [Point3::origin(); JOINT_COUNT];
    let mut accumulated = [UnitQuaternion::identity(); JOINT_COUNT];
    for &j in &skeleton.order {
        let Some(p) = skeleton.parents[j] else {
            continue;
        };
        accumulated[j] = accumulated[p] * pose.local[j];
        let segment = accumulated[p] * (skeleton.bone_lengths[j] * skeleton.rest_directions[j].into_inner());
        positions[j] = positions[p] + segment;
    }
    positions
}

/// World-space joint positions: chain rotations accumulated from the wrist
/// outward, with the wrist rigid transform applied last.
pub fn forward_kinematics(
    skeleton: &HandSkeleton,
    pose: &HandPose,
) -> [Point3<f64>; JOINT_COUNT] {
    let local = forward_kinematics_local(skeleton, pose);
    local.map(|p| Point3::from(pose.wrist_rotation * p.coords + pose.wrist_translation))
}

/// Weight of a camera view for rotation fusion, from the angle between the
/// subject-to-camera direction and the performer's facing direction:
/// `max(0, cos theta)^2`. A camera the performer faces head-on scores 1, an
/// orthogonal one scores 0.
pub fn view_weight(camera: &CameraPose, facing: &Unit<Vector3<f64>>) -> f64 {
    let toward_camera = -camera.optical_axis().into_inner();
    toward_camera.dot(facing).max(0.0).powi(2)
}

/// Sign-aligned weighted quaternion mean: every quaternion is flipped onto
/// the hemisphere of the highest-weighted one before the coefficients are
/// averaged and renormalized.
pub fn fuse_rotations(
    per_view: &[(UnitQuaternion<f64>, f64)],
) -> Result<UnitQuaternion<f64>, KinematicsError> {
    if let Some(&(_, w)) = per_view.iter().find(|(_, w)| *w < 0.0) {
        return Err(KinematicsError::NegativeWeight(w));
    }
    let reference = per_view
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(KinematicsError::NoViewWeight)?
        .0;

    let mut sum = nalgebra::Vector4::zeros();
    for (q, w) in per_view {
        let sign = if q.coords.dot(&reference.coords) < 0.0 {
            -1.0
        } else {
            1.0
        };
        sum += q.coords * (*w * sign);
    }
    match sum.try_normalize(1e-12) {
        Some(coords) => Ok(UnitQuaternion::new_unchecked(nalgebra::Quaternion::from(
            coords,
        ))),
        // Exact cancellation cannot survive the sign alignment unless the
        // inputs are mutually orthogonal; fall back to the dominant view.
        None => Ok(reference),
    }
}

/// Result of [`align_wrist`]: the rigid transform mapping the wrist-frame
/// joints onto the target set, with the mean unsquared joint distance left
/// after alignment.
#[derive(Debug, Clone)]
pub struct WristAlignment {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    /// Weighted mean of the per-joint distances (meters) at the optimum.
    pub residual: f64,
}

impl WristAlignment {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Closed-form weighted orthogonal Procrustes fit of a rigid transform that
/// carries `source` (hand joints in the wrist frame) onto `target` (world
/// joints). Minimizes the weighted sum of squared joint distances; the
/// reported residual is the unsquared weighted mean distance.
pub fn align_wrist(
    source: &[Point3<f64>; JOINT_COUNT],
    target: &[Point3<f64>; JOINT_COUNT],
    weights: &[f64; JOINT_COUNT],
) -> Result<WristAlignment, KinematicsError> {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    let used = weights.iter().filter(|w| **w > 0.0).count();
    if used < 3 || total <= 0.0 {
        return Err(KinematicsError::DegenerateCorrespondence);
    }

    let mut src_centroid = Vector3::zeros();
    let mut tgt_centroid = Vector3::zeros();
    for j in 0..JOINT_COUNT {
        if weights[j] > 0.0 {
            src_centroid += source[j].coords * weights[j];
            tgt_centroid += target[j].coords * weights[j];
        }
    }
    src_centroid /= total;
    tgt_centroid /= total;

    let mut cross_cov = Matrix3::zeros();
    for j in 0..JOINT_COUNT {
        if weights[j] > 0.0 {
            let s = source[j].coords - src_centroid;
            let t = target[j].coords - tgt_centroid;
            cross_cov += weights[j] * t * s.transpose();
        }
    }

    let svd = cross_cov.svd(true, true);
    let sv = &svd.singular_values;
    if sv[0] <= 0.0 || sv[1] / sv[0] < 1e-9 {
        // Rank <= 1 source/target scatter: the points are collinear.
        return Err(KinematicsError::DegenerateCorrespondence);
    }
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let det = (u * v_t).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rot = u * correction * v_t;
    let rotation =
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(rot));
    let translation = tgt_centroid - rot * src_centroid;

    let mut residual = 0.0;
    for j in 0..JOINT_COUNT {
        if weights[j] > 0.0 {
            let mapped = rot * source[j].coords + translation;
            residual += weights[j] * (mapped - target[j].coords).norm();
        }
    }
    Ok(WristAlignment {
        rotation,
        translation,
        residual: residual / total,
    })
}
