//! Evaluation metrics: MPJPE with root alignment (whole hand or a joint
//! subset) and fingertip contact deviation, reported in millimeters.

use crate::kinematics::JOINT_COUNT;
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("joint layout mismatch: {predicted} predicted vs {ground_truth} ground-truth joints")]
    LayoutMismatch {
        predicted: usize,
        ground_truth: usize,
    },
    #[error("joint subset is empty")]
    EmptySubset,
    #[error("joint index {0} out of range")]
    JointOutOfRange(usize),
}

const M_TO_MM: f64 = 1000.0;

/// Mean per-joint position error in millimeters after translating the
/// predicted set so the wrists (joint 0) coincide. Alignment is
/// translation-only; rotation differences stay visible in the score.
pub fn mpjpe(predicted: &[Point3<f64>], ground_truth: &[Point3<f64>]) -> Result<f64, MetricsError> {
    let all: Vec<usize> = (0..predicted.len().max(1)).collect();
    mpjpe_subset(predicted, ground_truth, &all)
}

/// MPJPE averaged over a joint subset; root alignment still uses the wrist.
pub fn mpjpe_subset(
    predicted: &[Point3<f64>],
    ground_truth: &[Point3<f64>],
    subset: &[usize],
) -> Result<f64, MetricsError> {
    if predicted.len() != ground_truth.len() || predicted.is_empty() {
        return Err(MetricsError::LayoutMismatch {
            predicted: predicted.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if subset.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    let shift = ground_truth[0] - predicted[0];
    let mut sum = 0.0;
    for &j in subset {
        if j >= predicted.len() {
            return Err(MetricsError::JointOutOfRange(j));
        }
        sum += ((predicted[j] + shift) - ground_truth[j]).norm();
    }
    Ok(sum / subset.len() as f64 * M_TO_MM)
}

/// Euclidean distance in millimeters between the estimated note-playing
/// fingertip and the fingerboard point implied by the pitch.
pub fn contact_deviation(fingertip: &Point3<f64>, theoretical: &Point3<f64>) -> f64 {
    (fingertip - theoretical).norm() * M_TO_MM
}

/// Per-frame evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: usize,
    pub mpjpe_whole_hand_mm: Option<f64>,
    pub mpjpe_note_finger_mm: Option<f64>,
    pub contact_deviation_mm: Option<f64>,
}

/// Scene-level evaluation summary. Means are frame-weighted; frames with no
/// binding (open string or unvoiced) are excluded from the contact-deviation
/// mean and counted separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mpjpe_whole_hand_mm: f64,
    pub mpjpe_note_finger_mm: f64,
    pub contact_deviation_mm: f64,
    pub frames_with_binding: usize,
    pub frames_without_binding: usize,
    pub per_frame: Vec<FrameMetrics>,
}

impl EvaluationReport {
    /// Aggregate per-frame rows, averaging each metric over the frames where
    /// it is present.
    pub fn from_frames(per_frame: Vec<FrameMetrics>) -> Self {
        fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
            let collected: Vec<f64> = values.collect();
            if collected.is_empty() {
                (0.0, 0)
            } else {
                (
                    collected.iter().sum::<f64>() / collected.len() as f64,
                    collected.len(),
                )
            }
        }
        let (whole, _) = mean(per_frame.iter().filter_map(|f| f.mpjpe_whole_hand_mm));
        let (finger, _) = mean(per_frame.iter().filter_map(|f| f.mpjpe_note_finger_mm));
        let (contact, bound) = mean(per_frame.iter().filter_map(|f| f.contact_deviation_mm));
        Self {
            mpjpe_whole_hand_mm: whole,
            mpjpe_note_finger_mm: finger,
            contact_deviation_mm: contact,
            frames_with_binding: bound,
            frames_without_binding: per_frame.len() - bound,
            per_frame,
        }
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            out,
            "frame,mpjpe_whole_hand_mm,mpjpe_note_finger_mm,contact_deviation_mm"
        )?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.per_frame {
            writeln!(
                out,
                "{},{},{},{}",
                row.frame_id,
                cell(row.mpjpe_whole_hand_mm),
                cell(row.mpjpe_note_finger_mm),
                cell(row.contact_deviation_mm)
            )?;
        }
        Ok(())
    }
}

/// Joints of a 21-joint hand belonging to one finger (all four chain joints).
pub fn finger_joint_subset(finger: crate::kinematics::Finger) -> [usize; 4] {
    let tip = finger.tip();
    [tip - 3, tip - 2, tip - 1, tip]
}

/// Sanity guard used by callers assembling joint arrays from files.
pub fn expect_hand_layout(points: &[Point3<f64>]) -> Result<(), MetricsError> {
    if points.len() != JOINT_COUNT {
        return Err(MetricsError::LayoutMismatch {
            predicted: points.len(),
            ground_truth: JOINT_COUNT,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Finger;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn hand() -> Vec<Point3<f64>> {
        (0..JOINT_COUNT)
            .map(|j| Point3::new(j as f64 * 0.01, (j % 4) as f64 * 0.005, (j % 3) as f64 * 0.007))
            .collect()
    }

    #[test]
    fn identical_sets_score_zero() {
        let h = hand();
        assert_relative_eq!(mpjpe(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_is_removed_by_root_alignment() {
        let h = hand();
        let shifted: Vec<_> = h.iter().map(|p| p + Vector3::new(0.3, -0.1, 0.05)).collect();
        assert_relative_eq!(mpjpe(&shifted, &h).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn single_displaced_joint_averages_down() {
        let h = hand();
        let mut predicted = h.clone();
        predicted[7] += Vector3::new(0.021, 0.0, 0.0); // 21 mm on one of 21 joints
        assert_relative_eq!(mpjpe(&predicted, &h).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn mpjpe_is_not_rotation_invariant() {
        let h = hand();
        let rot = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        let wrist = h[0];
        let rotated: Vec<_> = h
            .iter()
            .map(|p| wrist + rot * (p - wrist))
            .collect();
        assert!(mpjpe(&rotated, &h).unwrap() > 1.0);
    }

    #[test]
    fn subset_full_equals_whole() {
        let h = hand();
        let mut predicted = h.clone();
        predicted[3] += Vector3::new(0.0, 0.004, 0.0);
        let all: Vec<usize> = (0..JOINT_COUNT).collect();
        assert_relative_eq!(
            mpjpe_subset(&predicted, &h, &all).unwrap(),
            mpjpe(&predicted, &h).unwrap()
        );
    }

    #[test]
    fn subset_exact_joint_scores_zero() {
        let h = hand();
        let mut predicted = h.clone();
        predicted[9] += Vector3::new(0.01, 0.0, 0.0);
        assert_relative_eq!(mpjpe_subset(&predicted, &h, &[5]).unwrap(), 0.0);
    }

    #[test]
    fn subset_mean_of_equal_errors() {
        let h = hand();
        let mut predicted = h.clone();
        let subset = [
            Finger::Index.flex_joints().0,
            Finger::Index.flex_joints().1,
            Finger::Index.tip(),
        ];
        for &j in &subset {
            predicted[j] += Vector3::new(0.0, 0.0, 0.003);
        }
        assert_relative_eq!(
            mpjpe_subset(&predicted, &h, &subset).unwrap(),
            3.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn subset_errors() {
        let h = hand();
        assert!(matches!(
            mpjpe_subset(&h, &h, &[]),
            Err(MetricsError::EmptySubset)
        ));
        assert!(matches!(
            mpjpe_subset(&h, &h[..20], &[0]),
            Err(MetricsError::LayoutMismatch { .. })
        ));
        assert!(matches!(
            mpjpe_subset(&h, &h, &[99]),
            Err(MetricsError::JointOutOfRange(99))
        ));
    }

    #[test]
    fn contact_deviation_examples() {
        let a = Point3::new(0.1, 0.2, 0.3);
        assert_relative_eq!(contact_deviation(&a, &a), 0.0);
        // The separations reported for the corrected and baseline pipelines.
        let post = a + Vector3::new(0.00519, 0.0, 0.0);
        assert_relative_eq!(contact_deviation(&post, &a), 5.19, epsilon = 1e-9);
        let pre = a + Vector3::new(0.0, 0.0224, 0.0);
        assert_relative_eq!(contact_deviation(&pre, &a), 22.40, epsilon = 1e-9);
    }

    #[test]
    fn contact_deviation_triangle_inequality() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(0.01, -0.02, 0.005);
        let c = Point3::new(-0.004, 0.013, 0.02);
        assert!(contact_deviation(&a, &c) <= contact_deviation(&a, &b) + contact_deviation(&b, &c) + 1e-12);
    }

    #[test]
    fn report_aggregation_counts_unbound_frames() {
        let rows = vec![
            FrameMetrics {
                frame_id: 0,
                mpjpe_whole_hand_mm: Some(2.0),
                mpjpe_note_finger_mm: Some(3.0),
                contact_deviation_mm: Some(10.0),
            },
            FrameMetrics {
                frame_id: 1,
                mpjpe_whole_hand_mm: Some(4.0),
                mpjpe_note_finger_mm: None,
                contact_deviation_mm: None,
            },
        ];
        let report = EvaluationReport::from_frames(rows);
        assert_relative_eq!(report.mpjpe_whole_hand_mm, 3.0);
        assert_relative_eq!(report.mpjpe_note_finger_mm, 3.0);
        assert_relative_eq!(report.contact_deviation_mm, 10.0);
        assert_eq!(report.frames_with_binding, 1);
        assert_eq!(report.frames_without_binding, 1);
    }
}
