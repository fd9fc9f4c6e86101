//! Pinhole cameras, DLT triangulation, and RANSAC-robust multi-view
//! reconstruction of keypoints.
//!
//! World coordinates are metric (meters). Image coordinates are pixels with
//! the origin at the top-left corner. A [`CameraPose`] maps world points into
//! the camera frame (`p_cam = R * p_world + t`) and the optical axis is +z in
//! the camera frame.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Point3, Unit, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Identifier of a camera view within a rig.
pub type ViewId = String;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("camera rotation is not a proper rotation matrix (orthonormality or determinant off by more than 1e-9)")]
    InvalidRotation,
    #[error("point at or behind the camera plane (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("need observations from at least two distinct views, got {0}")]
    InsufficientViews(usize),
    #[error("degenerate ray geometry (relative conditioning {0:.3e})")]
    DegenerateRays(f64),
    #[error("no consensus: no two-view sample reached two inliers")]
    NoConsensus,
    #[error("observation references view {0:?} which is not in the rig")]
    UnknownView(ViewId),
    #[error("observation for view {0:?} is not finite")]
    NonFiniteObservation(ViewId),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("duplicate camera id {0:?} in rig")]
    DuplicateView(ViewId),
}

/// Focal lengths and principal point of an ideal (distortion-free) pinhole
/// camera, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..=image_width as f64).contains(&cx) || !(0.0..=image_height as f64).contains(&cy)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {image_width}x{image_height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            image_width,
            image_height,
        })
    }
}

/// Rigid world-to-camera transform. Construction validates that the rotation
/// is orthonormal with determinant +1 (within 1e-9).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Pose of a camera positioned at `eye`, looking at `target`, with `up`
    /// fixing the roll. Image +x runs along `(target - eye) x up`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or(GeometryError::InvalidRotation)?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or(GeometryError::InvalidRotation)?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -rotation * eye.coords;
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera position in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (+z of the camera frame) expressed in world
    /// coordinates.
    pub fn optical_axis(&self) -> Unit<Vector3<f64>> {
        Unit::new_normalize(self.rotation.transpose() * Vector3::z())
    }

    pub fn to_camera(&self, point: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * point.coords + self.translation)
    }
}

/// A calibrated camera: intrinsics plus world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    /// Standard pinhole projection of a world point, without distortion.
    /// Points at or behind the camera plane are rejected.
    pub fn project(&self, point: &Point3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let cam = self.pose.to_camera(point);
        if cam.z <= 1e-12 {
            return Err(GeometryError::BehindCamera { depth: cam.z });
        }
        let k = &self.intrinsics;
        Ok(Vector2::new(
            k.fx * cam.x / cam.z + k.cx,
            k.fy * cam.y / cam.z + k.cy,
        ))
    }

    /// 3x4 projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let k = &self.intrinsics;
        let kmat = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.pose.rotation());
        rt.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(self.pose.translation());
        kmat * rt
    }
}

/// Calibrated cameras indexed by view id.
#[derive(Debug, Clone, Default)]
pub struct CameraRig {
    cameras: BTreeMap<ViewId, Camera>,
}

impl CameraRig {
    pub fn new(cameras: impl IntoIterator<Item = (ViewId, Camera)>) -> Result<Self, GeometryError> {
        let mut map = BTreeMap::new();
        for (id, cam) in cameras {
            if map.insert(id.clone(), cam).is_some() {
                return Err(GeometryError::DuplicateView(id));
            }
        }
        Ok(Self { cameras: map })
    }

    pub fn get(&self, id: &str) -> Option<&Camera> {
        self.cameras.get(id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ViewId, &Camera)> {
        self.cameras.iter()
    }

    pub fn view_ids(&self) -> impl Iterator<Item = &ViewId> {
        self.cameras.keys()
    }
}

/// A single 2D detection of a keypoint in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    pub view_id: ViewId,
    pub point: Vector2<f64>,
    pub confidence: f64,
}

impl Observation2D {
    pub fn new(view_id: ViewId, point: Vector2<f64>, confidence: f64) -> Result<Self, GeometryError> {
        if !point.x.is_finite() || !point.y.is_finite() {
            return Err(GeometryError::NonFiniteObservation(view_id));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self {
            view_id,
            point,
            confidence,
        })
    }
}

/// Result of a robust multi-view reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedPoint {
    pub position: Point3<f64>,
    pub inlier_views: BTreeSet<ViewId>,
    /// Mean reprojection error over the inlier views, pixels.
    pub mean_reprojection_error: f64,
}

/// RANSAC parameters for [`triangulate_ransac`]. The minimal sample is two
/// views.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier gate on per-view reprojection error, pixels.
    pub threshold_px: f64,
    pub max_iterations: usize,
    /// Observations below this confidence are dropped before sampling.
    pub confidence_floor: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 10.0,
            max_iterations: 200,
            confidence_floor: 0.3,
        }
    }
}

// Threshold on sigma_2/sigma_0 of the stacked DLT system below which the
// solution direction is considered non-unique (coaxial or duplicated rays).
const DEGENERACY_RATIO: f64 = 1e-10;

fn resolve_cameras<'a>(
    observations: &'a [Observation2D],
    rig: &'a CameraRig,
) -> Result<Vec<(&'a Observation2D, &'a Camera)>, GeometryError> {
    observations
        .iter()
        .map(|obs| {
            let cam = rig
                .get(&obs.view_id)
                .ok_or_else(|| GeometryError::UnknownView(obs.view_id.clone()))?;
            Ok((obs, cam))
        })
        .collect()
}

fn distinct_views(observations: &[&Observation2D]) -> usize {
    observations
        .iter()
        .map(|o| o.view_id.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Homogeneous linear least-squares triangulation over the given
/// observation/camera pairs. Returns the point and the RMS reprojection
/// error over the used views.
fn dlt(pairs: &[(&Observation2D, &Camera)]) -> Result<(Point3<f64>, f64), GeometryError> {
    let mut a = DMatrix::zeros(2 * pairs.len(), 4);
    for (i, (obs, cam)) in pairs.iter().enumerate() {
        let p = cam.projection_matrix();
        let r0 = p.row(0).clone_owned() * -1.0 + p.row(2).clone_owned() * obs.point.x;
        let r1 = p.row(1).clone_owned() * -1.0 + p.row(2).clone_owned() * obs.point.y;
        // Row normalization keeps the system well conditioned for pixel-scale
        // entries without changing its null space.
        let n0 = r0.norm().max(1e-300);
        let n1 = r1.norm().max(1e-300);
        a.row_mut(2 * i).copy_from(&(r0 / n0));
        a.row_mut(2 * i + 1).copy_from(&(r1 / n1));
    }

    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    if sv[0] <= 0.0 || sv[2] / sv[0] < DEGENERACY_RATIO {
        return Err(GeometryError::DegenerateRays(sv[2] / sv[0].max(1e-300)));
    }
    let v_t = svd.v_t.expect("svd requested v_t");
    let x = v_t.row(3);
    let w = x[3];
    let xyz = Vector3::new(x[0], x[1], x[2]);
    if w.abs() < 1e-12 * xyz.norm().max(1e-300) {
        return Err(GeometryError::DegenerateRays(w.abs()));
    }
    let point = Point3::from(xyz / w);

    let mut sq_sum = 0.0;
    for (obs, cam) in pairs {
        match cam.project(&point) {
            Ok(px) => sq_sum += (px - obs.point).norm_squared(),
            Err(_) => return Ok((point, f64::INFINITY)),
        }
    }
    let rms = (sq_sum / pairs.len() as f64).sqrt();
    Ok((point, rms))
}

/// Triangulate a point from two or more observations in distinct views.
pub fn triangulate_dlt(
    observations: &[Observation2D],
    rig: &CameraRig,
) -> Result<(Point3<f64>, f64), GeometryError> {
    let pairs = resolve_cameras(observations, rig)?;
    let views = distinct_views(&pairs.iter().map(|(o, _)| *o).collect::<Vec<_>>());
    if views < 2 {
        return Err(GeometryError::InsufficientViews(views));
    }
    dlt(&pairs)
}

fn reprojection_error(cam: &Camera, point: &Point3<f64>, obs: &Observation2D) -> f64 {
    match cam.project(point) {
        Ok(px) => (px - obs.point).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Robust multi-view triangulation: two-view RANSAC hypotheses scored by
/// inlier count (ties broken by mean reprojection error), final point
/// re-estimated by DLT over the consensus set.
///
/// Observations below `params.confidence_floor` are excluded before
/// sampling. The generator is caller-supplied so runs are reproducible.
pub fn triangulate_ransac<R: Rng>(
    observations: &[Observation2D],
    rig: &CameraRig,
    params: &RansacParams,
    rng: &mut R,
) -> Result<ReconstructedPoint, GeometryError> {
    let pairs = resolve_cameras(observations, rig)?;
    let usable: Vec<(&Observation2D, &Camera)> = pairs
        .into_iter()
        .filter(|(o, _)| o.confidence >= params.confidence_floor)
        .collect();
    let views = distinct_views(&usable.iter().map(|(o, _)| *o).collect::<Vec<_>>());
    if views < 2 {
        return Err(GeometryError::InsufficientViews(views));
    }

    let errors_for = |point: &Point3<f64>| -> Vec<f64> {
        usable
            .iter()
            .map(|(o, c)| reprojection_error(c, point, o))
            .collect()
    };
    let inliers_of = |errs: &[f64]| -> Vec<usize> {
        errs.iter()
            .enumerate()
            .filter(|(_, e)| **e <= params.threshold_px)
            .map(|(i, _)| i)
            .collect()
    };

    let mut best: Option<(Vec<usize>, f64, Point3<f64>)> = None;
    for _ in 0..params.max_iterations {
        let sample = rand::seq::index::sample(rng, usable.len(), 2);
        let (i, j) = (sample.index(0), sample.index(1));
        if usable[i].0.view_id == usable[j].0.view_id {
            continue;
        }
        let Ok((point, _)) = dlt(&[usable[i], usable[j]]) else {
            continue;
        };
        let errs = errors_for(&point);
        let inliers = inliers_of(&errs);
        if inliers.len() < 2 {
            continue;
        }
        let mean = inliers.iter().map(|&k| errs[k]).sum::<f64>() / inliers.len() as f64;
        let better = match &best {
            None => true,
            Some((bi, bm, _)) => {
                inliers.len() > bi.len() || (inliers.len() == bi.len() && mean < *bm)
            }
        };
        let full_consensus = inliers.len() == usable.len();
        if better {
            best = Some((inliers, mean, point));
        }
        if full_consensus {
            break;
        }
    }

    let (mut inliers, _, mut point) = best.ok_or(GeometryError::NoConsensus)?;

    // Refit on the consensus set and let it settle; keep the previous model
    // if a refit would drop below the two-view minimum.
    for _ in 0..10 {
        let subset: Vec<_> = inliers.iter().map(|&k| usable[k]).collect();
        let Ok((refit, _)) = dlt(&subset) else { break };
        let errs = errors_for(&refit);
        let next = inliers_of(&errs);
        if next.len() < 2 {
            break;
        }
        point = refit;
        if next == inliers {
            break;
        }
        inliers = next;
    }

    let errs = errors_for(&point);
    let mean = inliers.iter().map(|&k| errs[k]).sum::<f64>() / inliers.len() as f64;
    let inlier_views: BTreeSet<ViewId> = inliers
        .iter()
        .map(|&k| usable[k].0.view_id.clone())
        .collect();
    Ok(ReconstructedPoint {
        position: point,
        inlier_views,
        mean_reprojection_error: mean,
    })
}
