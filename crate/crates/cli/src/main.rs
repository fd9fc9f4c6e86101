//! Command-line driver: triangulate keypoints, track pitch, run the full
//! audio-guided refinement, evaluate against ground truth, and generate
//! synthetic scenes.
//!
//! Exit codes: 0 on success, 1 on input errors, 2 on internal invariant
//! violations.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use stringcap::audio::AudioBuffer;
use stringcap::config::{InstrumentConfig, PipelineConfig};
use stringcap::io;
use stringcap::kinematics::HandSkeleton;
use stringcap::metrics::{
    contact_deviation, finger_joint_subset, mpjpe, mpjpe_subset, EvaluationReport, FrameMetrics,
};
use stringcap::pipeline::{run_pipeline, AudioSource, SceneInput, SceneOutput, SyncInfo};
use stringcap::synth::{generate_scene, SynthConfig};

#[derive(Parser)]
#[command(name = "stringcap", version, about = "Audio-guided string-performance motion capture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the robust-triangulation substreams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    export_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Triangulate every named keypoint (vision stages only).
    Triangulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Camera calibration JSON.
        #[arg(long)]
        calibration: PathBuf,
        /// Per-view keypoints JSON.
        #[arg(long)]
        keypoints: PathBuf,
    },
    /// Track the fundamental frequency of a wav file, one value per video
    /// frame.
    Pitch {
        #[command(flatten)]
        common: CommonArgs,
        /// Input audio (16-bit PCM or 32-bit float wav).
        #[arg(long)]
        audio: PathBuf,
        /// Video frame rate the track is aligned to.
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
    },
    /// Run the full audio-guided pipeline.
    Refine {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// Performance audio wav; alternative to --pitch-track.
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Precomputed pitch track CSV (frame, f0_hz, confidence).
        #[arg(long)]
        pitch_track: Option<PathBuf>,
        /// Instrument definition JSON (defaults to a cello).
        #[arg(long)]
        instrument: Option<PathBuf>,
        /// Hand skeleton JSON (defaults to the built-in adult hand).
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Video frame of the synchronization clap.
        #[arg(long)]
        clap_frame: Option<usize>,
        /// Disable the audio-guided stages (vision-only baseline).
        #[arg(long)]
        no_audio: bool,
    },
    /// Compare a pipeline output against a ground-truth file.
    Metrics {
        #[command(flatten)]
        common: CommonArgs,
        /// Scene output JSON produced by `refine`.
        #[arg(long)]
        scene: PathBuf,
        /// Ground-truth JSON produced by `synth`.
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Synth configuration JSON; defaults to a demo phrase.
        #[arg(long)]
        synth_config: Option<PathBuf>,
    },
}

fn main() {
    // Usage problems are input errors (exit 1); help and version requests
    // are not errors at all.
    let cli = Cli::try_parse().unwrap_or_else(|err| {
        let _ = err.print();
        match err.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                std::process::exit(0)
            }
            _ => std::process::exit(1),
        }
    });
    let outcome = std::panic::catch_unwind(|| run(cli));
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
        Err(_) => {
            eprintln!("error: internal invariant violation");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Triangulate {
            common,
            calibration,
            keypoints,
        } => triangulate(common, &calibration, &keypoints),
        Command::Pitch { common, audio, fps } => pitch(common, &audio, fps),
        Command::Refine {
            common,
            calibration,
            keypoints,
            audio,
            pitch_track,
            instrument,
            skeleton,
            clap_frame,
            no_audio,
        } => refine(
            common,
            &calibration,
            &keypoints,
            audio.as_deref(),
            pitch_track.as_deref(),
            instrument.as_deref(),
            skeleton.as_deref(),
            clap_frame,
            no_audio,
        ),
        Command::Metrics {
            common,
            scene,
            ground_truth,
        } => metrics(common, &scene, &ground_truth),
        Command::Synth {
            common,
            synth_config,
        } => synth(common, synth_config.as_deref()),
    }
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => io::load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.stages.seed = seed;
    }
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn triangulate(common: CommonArgs, calibration: &Path, keypoints: &Path) -> Result<()> {
    let mut config = load_config(&common)?;
    config.stages.audio_enabled = false;
    let rig = io::load_calibration(calibration)?;
    let (frames, fps) = io::load_keypoints(keypoints)?;
    let input = SceneInput {
        rig,
        frames,
        audio: AudioSource::None,
        instrument: InstrumentConfig::default(),
        skeleton: HandSkeleton::default_adult(),
        sync: SyncInfo::default(),
        fps,
    };
    let output = run_pipeline(&input, &config)?;
    ensure_dir(&common.export_dir)?;
    io::save_scene_output(common.export_dir.join("points.json"), &output)?;
    io::save_points_csv(common.export_dir.join("points.csv"), &output)?;
    print_warnings(&output);
    let triangulated: usize = output.frames.iter().map(|f| f.points.len()).sum();
    println!(
        "triangulated {} keypoints over {} frames -> {}",
        triangulated,
        output.frames.len(),
        common.export_dir.display()
    );
    Ok(())
}

fn pitch(common: CommonArgs, audio: &Path, fps: f64) -> Result<()> {
    let config = load_config(&common)?;
    let buffer = AudioBuffer::read_wav(audio)?;
    let track = stringcap::audio::detect_pitch(&buffer, fps, &config.pitch)?;
    ensure_dir(&common.export_dir)?;
    let out = common.export_dir.join("pitch.csv");
    io::save_pitch_track(&out, &track)?;
    let voiced = track.frames.iter().filter(|f| f.f0_hz.is_some()).count();
    println!(
        "{} frames ({voiced} voiced) -> {}",
        track.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn refine(
    common: CommonArgs,
    calibration: &Path,
    keypoints: &Path,
    audio: Option<&Path>,
    pitch_track: Option<&Path>,
    instrument: Option<&Path>,
    skeleton: Option<&Path>,
    clap_frame: Option<usize>,
    no_audio: bool,
) -> Result<()> {
    let mut config = load_config(&common)?;
    if no_audio {
        config.stages.audio_enabled = false;
    }
    let rig = io::load_calibration(calibration)?;
    let (frames, fps) = io::load_keypoints(keypoints)?;
    let audio_source = match (audio, pitch_track) {
        (Some(_), Some(_)) => bail!("--audio and --pitch-track are mutually exclusive"),
        (Some(path), None) => AudioSource::Wav(AudioBuffer::read_wav(path)?),
        (None, Some(path)) => AudioSource::Track(io::load_pitch_track(path, fps)?),
        (None, None) => {
            if config.stages.audio_enabled {
                bail!("the audio-guided pipeline needs --audio or --pitch-track (or pass --no-audio)");
            }
            AudioSource::None
        }
    };
    let input = SceneInput {
        rig,
        frames,
        audio: audio_source,
        instrument: match instrument {
            Some(path) => io::load_instrument_config(path)?,
            None => InstrumentConfig::default(),
        },
        skeleton: match skeleton {
            Some(path) => io::load_skeleton(path)?,
            None => HandSkeleton::default_adult(),
        },
        sync: SyncInfo {
            clap_video_frame: clap_frame,
            clap_sample: None,
        },
        fps,
    };
    let output = run_pipeline(&input, &config)?;
    ensure_dir(&common.export_dir)?;
    io::save_scene_output(common.export_dir.join("scene.json"), &output)?;
    io::save_points_csv(common.export_dir.join("points.csv"), &output)?;
    print_warnings(&output);
    let bound = output.frames.iter().filter(|f| f.binding.is_some()).count();
    let refined = output
        .frames
        .iter()
        .filter(|f| f.refinement.is_some())
        .count();
    println!(
        "{} frames, {bound} bound, {refined} refined, {} vibrato spans -> {}",
        output.frames.len(),
        output.vibrato_spans.len(),
        common.export_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile {
    baseline: MetricsSummary,
    refined: MetricsSummary,
}

#[derive(Serialize)]
struct MetricsSummary {
    mpjpe_whole_hand_mm: f64,
    mpjpe_note_finger_mm: f64,
    contact_deviation_mm: f64,
    frames_with_binding: usize,
    frames_without_binding: usize,
}

fn summarize(report: &EvaluationReport) -> MetricsSummary {
    MetricsSummary {
        mpjpe_whole_hand_mm: report.mpjpe_whole_hand_mm,
        mpjpe_note_finger_mm: report.mpjpe_note_finger_mm,
        contact_deviation_mm: report.contact_deviation_mm,
        frames_with_binding: report.frames_with_binding,
        frames_without_binding: report.frames_without_binding,
    }
}

fn metrics(common: CommonArgs, scene: &Path, ground_truth: &Path) -> Result<()> {
    let output: SceneOutput = io::load_scene_output(scene)?;
    let truth = io::load_ground_truth(ground_truth)?;
    if output.frames.len() != truth.frames.len() {
        bail!(
            "frame count mismatch: scene has {}, ground truth has {}",
            output.frames.len(),
            truth.frames.len()
        );
    }

    let mut pre_rows = Vec::new();
    let mut post_rows = Vec::new();
    for (out, gt) in output.frames.iter().zip(&truth.frames) {
        let row = |hand: &Option<Vec<_>>| -> Result<FrameMetrics> {
            let mut metrics = FrameMetrics {
                frame_id: gt.frame_id,
                mpjpe_whole_hand_mm: None,
                mpjpe_note_finger_mm: None,
                contact_deviation_mm: None,
            };
            if let Some(hand) = hand {
                metrics.mpjpe_whole_hand_mm = Some(mpjpe(hand, &gt.joints)?);
                if let Some(finger) = gt.finger {
                    let subset = finger_joint_subset(finger);
                    metrics.mpjpe_note_finger_mm =
                        Some(mpjpe_subset(hand, &gt.joints, &subset)?);
                    if let Some(target) = gt.target {
                        metrics.contact_deviation_mm =
                            Some(contact_deviation(&hand[finger.tip()], &target));
                    }
                }
            }
            Ok(metrics)
        };
        pre_rows.push(row(&out.hand_pre)?);
        post_rows.push(row(&out.hand_post)?);
    }
    let baseline = EvaluationReport::from_frames(pre_rows);
    let refined = EvaluationReport::from_frames(post_rows);

    ensure_dir(&common.export_dir)?;
    let file = MetricsFile {
        baseline: summarize(&baseline),
        refined: summarize(&refined),
    };
    std::fs::write(
        common.export_dir.join("report.json"),
        serde_json::to_string_pretty(&file)?,
    )?;
    let mut csv = Vec::new();
    refined.write_csv(&mut csv)?;
    std::fs::write(common.export_dir.join("report.csv"), csv)?;

    println!(
        "baseline: MPJPE {:.2} mm (note finger {:.2} mm), contact deviation {:.2} mm over {} frames",
        baseline.mpjpe_whole_hand_mm,
        baseline.mpjpe_note_finger_mm,
        baseline.contact_deviation_mm,
        baseline.frames_with_binding
    );
    println!(
        "refined:  MPJPE {:.2} mm (note finger {:.2} mm), contact deviation {:.2} mm over {} frames",
        refined.mpjpe_whole_hand_mm,
        refined.mpjpe_note_finger_mm,
        refined.contact_deviation_mm,
        refined.frames_with_binding
    );
    Ok(())
}

fn synth(common: CommonArgs, synth_config: Option<&Path>) -> Result<()> {
    let mut config: SynthConfig = match synth_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let scene = generate_scene(&config)?;
    let dir = &common.export_dir;
    ensure_dir(dir)?;
    io::save_calibration(dir.join("calibration.json"), &scene.rig)?;
    io::save_keypoints(dir.join("keypoints.json"), &scene.observations, scene.fps)?;
    io::save_skeleton(dir.join("skeleton.json"), &scene.skeleton)?;
    io::save_instrument_config(dir.join("instrument.json"), &scene.instrument_config)?;
    io::save_ground_truth(dir.join("ground_truth.json"), &scene)?;
    scene.audio.write_wav(dir.join("audio.wav"))?;
    println!(
        "{} frames, {} cameras, clap at frame {:?} -> {}",
        scene.frames.len(),
        scene.rig.len(),
        scene.clap_video_frame,
        dir.display()
    );
    Ok(())
}

fn print_warnings(output: &SceneOutput) {
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }
}
