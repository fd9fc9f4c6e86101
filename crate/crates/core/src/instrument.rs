//! String-instrument geometry: string segments built from nut and bridge
//! landmarks, the pitch / vibrating-length relation, fingerboard candidate
//! positions for a detected pitch, and bow-string relative features.
//!
//! A string runs from its bridge anchor to its nut anchor; the vibrating
//! portion spans bridge to pressed point, so a press point sits at the
//! vibrating length measured from the bridge toward the nut.

use crate::audio::cents_between;
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("degenerate landmarks: the {0} segment has zero length")]
    DegenerateLandmarks(&'static str),
    #[error("string fundamentals must be positive and strictly increasing, got {0:?}")]
    InvalidTunings([f64; 4]),
    #[error("string directions spread over {max_angle_deg:.1} degrees; strings must be near-parallel (<= 15)")]
    StringsNotParallel { max_angle_deg: f64 },
    #[error("pitch {pitch_hz:.2} Hz is below the {fundamental_hz:.2} Hz fundamental beyond tolerance")]
    PitchBelowFundamental { pitch_hz: f64, fundamental_hz: f64 },
    #[error("vibrating length {length:.4} m outside [0, {fundamental_length:.4}] m")]
    LengthOutOfRange { length: f64, fundamental_length: f64 },
    #[error("pitch must be positive, got {0}")]
    InvalidPitch(f64),
    #[error("spacing fractions must be strictly increasing within (0, 1), got {0:?}")]
    InvalidSpacing([f64; 4]),
    #[error("bow frog and tip coincide")]
    DegenerateBow,
    #[error("need at least two frames of frog positions")]
    InsufficientFrames,
}

/// One string: anchors in world space, tuning, and the derived fundamental
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringSpec {
    pub name: String,
    /// Open-string (fundamental) frequency, Hz.
    pub fundamental_hz: f64,
    pub nut_point: Point3<f64>,
    pub bridge_point: Point3<f64>,
    /// Full nut-to-bridge length, meters. Equals the anchor distance.
    pub fundamental_length: f64,
}

impl StringSpec {
    pub fn new(
        name: impl Into<String>,
        fundamental_hz: f64,
        nut_point: Point3<f64>,
        bridge_point: Point3<f64>,
    ) -> Result<Self, InstrumentError> {
        let length = (nut_point - bridge_point).norm();
        if length <= 0.0 {
            return Err(InstrumentError::DegenerateLandmarks("string"));
        }
        if !(fundamental_hz > 0.0) {
            return Err(InstrumentError::InvalidTunings([fundamental_hz; 4]));
        }
        Ok(Self {
            name: name.into(),
            fundamental_hz,
            nut_point,
            bridge_point,
            fundamental_length: length,
        })
    }

    /// Unit direction from the bridge anchor toward the nut anchor.
    pub fn direction(&self) -> Vector3<f64> {
        (self.nut_point - self.bridge_point) / self.fundamental_length
    }
}

/// The four strings of one frame, ordered low to high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentModel {
    strings: [StringSpec; 4],
    pub frame_id: usize,
}

impl InstrumentModel {
    pub fn new(strings: [StringSpec; 4], frame_id: usize) -> Result<Self, InstrumentError> {
        let tunings = [
            strings[0].fundamental_hz,
            strings[1].fundamental_hz,
            strings[2].fundamental_hz,
            strings[3].fundamental_hz,
        ];
        if tunings.windows(2).any(|w| w[0] >= w[1]) || tunings.iter().any(|f| !(*f > 0.0)) {
            return Err(InstrumentError::InvalidTunings(tunings));
        }
        let mut max_angle: f64 = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let cos = strings[i].direction().dot(&strings[j].direction());
                max_angle = max_angle.max(cos.clamp(-1.0, 1.0).acos());
            }
        }
        if max_angle > 15f64.to_radians() {
            return Err(InstrumentError::StringsNotParallel {
                max_angle_deg: max_angle.to_degrees(),
            });
        }
        Ok(Self { strings, frame_id })
    }

    pub fn strings(&self) -> &[StringSpec; 4] {
        &self.strings
    }

    pub fn string(&self, index: usize) -> &StringSpec {
        &self.strings[index]
    }
}

/// Bow line for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowState {
    pub frog: Point3<f64>,
    pub tip: Point3<f64>,
    pub frame_id: usize,
}

impl BowState {
    pub fn new(frog: Point3<f64>, tip: Point3<f64>, frame_id: usize) -> Result<Self, InstrumentError> {
        if (tip - frog).norm() <= 0.0 {
            return Err(InstrumentError::DegenerateBow);
        }
        Ok(Self { frog, tip, frame_id })
    }
}

/// Default even spacing with half-gap margins: string i anchors at fraction
/// (2i+1)/8 along both the nut and bridge segments.
pub const DEFAULT_SPACING: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

/// Build the four strings by interpolating the nut and bridge landmark
/// segments at the given fractions, pairing them with the tunings (low to
/// high).
pub fn build_strings(
    nut_left: Point3<f64>,
    nut_right: Point3<f64>,
    bridge_left: Point3<f64>,
    bridge_right: Point3<f64>,
    tunings_hz: [f64; 4],
    spacing: [f64; 4],
    names: [&str; 4],
    frame_id: usize,
) -> Result<InstrumentModel, InstrumentError> {
    if (nut_right - nut_left).norm() <= 0.0 {
        return Err(InstrumentError::DegenerateLandmarks("nut"));
    }
    if (bridge_right - bridge_left).norm() <= 0.0 {
        return Err(InstrumentError::DegenerateLandmarks("bridge"));
    }
    if spacing.windows(2).any(|w| w[0] >= w[1])
        || spacing.iter().any(|t| !(0.0..1.0).contains(t))
    {
        return Err(InstrumentError::InvalidSpacing(spacing));
    }
    let lerp = |a: Point3<f64>, b: Point3<f64>, t: f64| Point3::from(a.coords * (1.0 - t) + b.coords * t);
    let mut strings = Vec::with_capacity(4);
    for i in 0..4 {
        let nut = lerp(nut_left, nut_right, spacing[i]);
        let bridge = lerp(bridge_left, bridge_right, spacing[i]);
        strings.push(StringSpec::new(names[i], tunings_hz[i], nut, bridge)?);
    }
    let strings: [StringSpec; 4] = strings.try_into().expect("four strings");
    InstrumentModel::new(strings, frame_id)
}

/// Vibrating length producing `pitch_hz` on the string: `L_vib = F * L_fund / P`,
/// clamped to the physical range. Pitches more than `tolerance_cents` below
/// the fundamental are rejected.
pub fn vibrating_length_for_pitch(
    pitch_hz: f64,
    string: &StringSpec,
    tolerance_cents: f64,
) -> Result<f64, InstrumentError> {
    if !(pitch_hz > 0.0) {
        return Err(InstrumentError::InvalidPitch(pitch_hz));
    }
    let floor = string.fundamental_hz * 2f64.powf(-tolerance_cents / 1200.0);
    if pitch_hz < floor {
        return Err(InstrumentError::PitchBelowFundamental {
            pitch_hz,
            fundamental_hz: string.fundamental_hz,
        });
    }
    let raw = string.fundamental_hz * string.fundamental_length / pitch_hz;
    Ok(raw.clamp(0.0, string.fundamental_length))
}

/// Point on the string at the given vibrating length from the bridge.
pub fn position_on_string(
    string: &StringSpec,
    vibrating_length: f64,
) -> Result<Point3<f64>, InstrumentError> {
    if !(0.0..=string.fundamental_length).contains(&vibrating_length) {
        return Err(InstrumentError::LengthOutOfRange {
            length: vibrating_length,
            fundamental_length: string.fundamental_length,
        });
    }
    Ok(string.bridge_point + vibrating_length * string.direction())
}

/// A fingerboard position able to produce a pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub string_index: usize,
    pub position: Point3<f64>,
    /// Within the open-string tolerance of the string's fundamental.
    pub is_open: bool,
}

/// All fingerboard positions that can produce `pitch_hz`: one per string
/// whose fundamental lies at or below the pitch (within the tolerance).
/// Empty when the pitch is below the lowest string.
pub fn candidate_positions(
    pitch_hz: f64,
    model: &InstrumentModel,
    open_string_tolerance_cents: f64,
) -> Result<Vec<Candidate>, InstrumentError> {
    if !(pitch_hz > 0.0) {
        return Err(InstrumentError::InvalidPitch(pitch_hz));
    }
    let mut candidates = Vec::new();
    for (i, string) in model.strings().iter().enumerate() {
        let Ok(length) = vibrating_length_for_pitch(pitch_hz, string, open_string_tolerance_cents)
        else {
            continue;
        };
        let position = position_on_string(string, length)?;
        let offset = cents_between(pitch_hz, string.fundamental_hz)
            .expect("both frequencies positive");
        candidates.push(Candidate {
            string_index: i,
            position,
            is_open: offset.abs() <= open_string_tolerance_cents,
        });
    }
    Ok(candidates)
}

/// Closest approach between the bow line and a string: distance in meters
/// plus the clamped contact parameters (string parameter 0 at the bridge,
/// bow parameter 0 at the frog).
pub fn bow_string_gap(bow: &BowState, string: &StringSpec) -> (f64, f64, f64) {
    // Closest points between two segments, after Ericson, Real-Time
    // Collision Detection, 5.1.9.
    let p1 = string.bridge_point;
    let d1 = string.nut_point - p1;
    let p2 = bow.frog;
    let d2 = bow.tip - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (mut s, mut t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        s = 0.0;
        t = 0.0;
    } else if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            s = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
        }
    }
    let closest_string = p1 + d1 * s;
    let closest_bow = p2 + d2 * t;
    ((closest_string - closest_bow).norm(), s, t)
}

/// Index of the string the bow is touching (minimal gap, ties to the lower
/// index), or `None` if nothing comes within `contact_threshold` meters.
pub fn bowed_string(
    bow: &BowState,
    model: &InstrumentModel,
    contact_threshold: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, string) in model.strings().iter().enumerate() {
        let (gap, _, _) = bow_string_gap(bow, string);
        if best.is_none_or(|(_, b)| gap < b) {
            best = Some((i, gap));
        }
    }
    best.and_then(|(i, gap)| (gap <= contact_threshold).then_some(i))
}

/// Per-frame frog speed in meters per second: central differences inside the
/// series, one-sided at the ends.
pub fn bow_speed(frog_positions: &[Point3<f64>], fps: f64) -> Result<Vec<f64>, InstrumentError> {
    let n = frog_positions.len();
    if n < 2 {
        return Err(InstrumentError::InsufficientFrames);
    }
    let mut speeds = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i == 0 {
            (frog_positions[1] - frog_positions[0]).norm() * fps
        } else if i == n - 1 {
            (frog_positions[n - 1] - frog_positions[n - 2]).norm() * fps
        } else {
            (frog_positions[i + 1] - frog_positions[i - 1]).norm() * fps / 2.0
        };
        speeds.push(v);
    }
    Ok(speeds)
}

/// Cello or violin presets: equal-temperament tunings from A4 = 440 Hz and
/// standard luthier dimensions for the synthetic instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentKind {
    Cello,
    Violin,
}

/// Frequency of the pitch `semitones_from_a4` equal-temperament steps away
/// from A4 = 440 Hz.
pub fn equal_temperament_hz(semitones_from_a4: i32) -> f64 {
    440.0 * 2f64.powf(semitones_from_a4 as f64 / 12.0)
}

impl InstrumentKind {
    /// Open-string frequencies low to high: cello C2/G2/D3/A3, violin
    /// G3/D4/A4/E5.
    pub fn tunings_hz(self) -> [f64; 4] {
        match self {
            InstrumentKind::Cello => [
                equal_temperament_hz(-33),
                equal_temperament_hz(-26),
                equal_temperament_hz(-19),
                equal_temperament_hz(-12),
            ],
            InstrumentKind::Violin => [
                equal_temperament_hz(-14),
                equal_temperament_hz(-7),
                equal_temperament_hz(0),
                equal_temperament_hz(7),
            ],
        }
    }

    pub fn string_names(self) -> [&'static str; 4] {
        match self {
            InstrumentKind::Cello => ["C2", "G2", "D3", "A3"],
            InstrumentKind::Violin => ["G3", "D4", "A4", "E5"],
        }
    }

    /// Nominal vibrating string length, meters.
    pub fn fundamental_length_m(self) -> f64 {
        match self {
            InstrumentKind::Cello => 0.690,
            InstrumentKind::Violin => 0.325,
        }
    }

    pub fn nut_width_m(self) -> f64 {
        match self {
            InstrumentKind::Cello => 0.024,
            InstrumentKind::Violin => 0.016,
        }
    }

    pub fn bridge_width_m(self) -> f64 {
        match self {
            InstrumentKind::Cello => 0.047,
            InstrumentKind::Violin => 0.034,
        }
    }
}
