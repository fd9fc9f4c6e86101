//! Run configuration: every tunable threshold in one place, loadable from
//! TOML or JSON. Defaults match the values documented on each subsystem.

use crate::audio::{ClapParams, PitchParams, VibratoParams};
use crate::geometry::RansacParams;
use crate::instrument::{InstrumentKind, DEFAULT_SPACING};
use crate::refine::{BindingParams, IkParams};
use serde::{Deserialize, Serialize};

/// Instrument description for both the pipeline (tunings, spacing) and the
/// synthetic scene generator (physical dimensions).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InstrumentConfig {
    pub kind: InstrumentKind,
    /// Open-string frequencies low to high; `None` uses the preset for the
    /// kind.
    pub tunings_hz: Option<[f64; 4]>,
    /// Fractions along the nut/bridge segments where strings anchor.
    pub spacing_fractions: [f64; 4],
    /// Nominal vibrating length for synthetic instruments; `None` uses the
    /// preset.
    pub fundamental_length_m: Option<f64>,
    pub nut_width_m: Option<f64>,
    pub bridge_width_m: Option<f64>,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        Self {
            kind: InstrumentKind::Cello,
            tunings_hz: None,
            spacing_fractions: DEFAULT_SPACING,
            fundamental_length_m: None,
            nut_width_m: None,
            bridge_width_m: None,
        }
    }
}

impl InstrumentConfig {
    pub fn cello() -> Self {
        Self::default()
    }

    pub fn violin() -> Self {
        Self {
            kind: InstrumentKind::Violin,
            ..Default::default()
        }
    }

    pub fn tunings(&self) -> [f64; 4] {
        self.tunings_hz.unwrap_or_else(|| self.kind.tunings_hz())
    }

    pub fn string_names(&self) -> [&'static str; 4] {
        self.kind.string_names()
    }

    pub fn fundamental_length(&self) -> f64 {
        self.fundamental_length_m
            .unwrap_or_else(|| self.kind.fundamental_length_m())
    }

    pub fn nut_width(&self) -> f64 {
        self.nut_width_m.unwrap_or_else(|| self.kind.nut_width_m())
    }

    pub fn bridge_width(&self) -> f64 {
        self.bridge_width_m
            .unwrap_or_else(|| self.kind.bridge_width_m())
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub ransac: RansacParams,
    pub pitch: PitchParams,
    pub vibrato: VibratoParams,
    pub clap: ClapParams,
    pub binding: BindingParams,
    pub ik: IkParams,
    pub stages: StageConfig,
}

/// Stage toggles and orchestration knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Disable all audio-guided stages; the output is the vision-only
    /// baseline.
    pub audio_enabled: bool,
    /// Gap below which the bow is reported as touching a string, meters.
    pub bow_contact_threshold_m: f64,
    /// Seed for the per-keypoint RANSAC substreams.
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            audio_enabled: true,
            bow_contact_threshold_m: 0.008,
            seed: 0,
        }
    }
}
