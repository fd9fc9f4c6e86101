//! Audio-guided refinement of multi-view string-performance motion capture.
//!
//! Vision-based capture of cello and violin playing loses exactly the detail
//! that matters most: where the note-playing fingertip touches the string.
//! The heard pitch pins that contact down. Given calibrated cameras,
//! per-view 2D keypoints, and the performance audio, this crate
//!
//! 1. reconstructs body, hand, instrument, and bow keypoints by
//!    RANSAC-robust triangulation ([`geometry`]),
//! 2. builds a kinematic hand, optionally fusing per-view joint rotations
//!    across cameras and aligning the wrist onto the triangulated joints
//!    ([`kinematics`]),
//! 3. models the four strings from nut/bridge landmarks and maps pitch to a
//!    fingerboard point through the vibrating-length relation
//!    ([`instrument`]),
//! 4. tracks the fundamental frequency once per video frame and detects
//!    vibrato spans ([`audio`]),
//! 5. resolves the string ambiguity, binds the target to a fingertip, and
//!    bends that finger's two distal joints onto it with a bounded
//!    quasi-Newton solve ([`refine`]),
//! 6. reports MPJPE and contact-deviation metrics ([`metrics`]).
//!
//! [`pipeline`] orchestrates the stages over a scene; [`synth`] generates
//! ground-truth scenes with harmonic audio for end-to-end verification, and
//! [`io`] defines the file formats the command-line driver speaks.
//!
//! ```no_run
//! use stringcap::config::PipelineConfig;
//! use stringcap::pipeline::run_pipeline;
//! use stringcap::synth::{generate_scene, SynthConfig};
//!
//! let scene = generate_scene(&SynthConfig::default())?;
//! let output = run_pipeline(&scene.scene_input(), &PipelineConfig::default())?;
//! for frame in &output.frames {
//!     if let Some(binding) = &frame.binding {
//!         println!("frame {}: string {} {:?}", frame.frame_id, binding.string_index, binding.finger);
//!     }
//! }
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod audio;
pub mod config;
pub mod geometry;
pub mod instrument;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod refine;
mod seeding;
pub mod solver;
pub mod synth;

pub use config::{InstrumentConfig, PipelineConfig};
pub use pipeline::{run_pipeline, SceneInput, SceneOutput};
pub use synth::{generate_scene, SynthConfig};
