//! Frame-synchronous monophonic pitch tracking, cents arithmetic, vibrato
//! span detection, clap detection, and audio-to-video offset alignment.
//!
//! The tracker is a cumulative-mean-normalized difference function with an
//! absolute threshold and parabolic minimum interpolation, evaluated once per
//! video frame on a window centered at the frame timestamp. Input files may
//! alternatively carry a precomputed pitch track from any external tracker;
//! the per-frame contract is the same either way.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("empty audio buffer")]
    EmptyAudio,
    #[error("audio too short: {samples} samples, need at least {needed} for one analysis window")]
    TooShort { samples: usize, needed: usize },
    #[error("sample rate must be positive")]
    InvalidSampleRate,
    #[error("frequency must be positive, got {0}")]
    InvalidFrequency(f64),
    #[error("fmin {fmin} must be below fmax {fmax}")]
    InvalidRange { fmin: f64, fmax: f64 },
    #[error("no clap found: no energy spike above the background")]
    NoClapFound,
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    UnsupportedWav(String),
    #[error("pitch track csv line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidSampleRate);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Read a PCM 16-bit or 32-bit float wav file. Stereo input is downmixed
    /// by averaging the channels.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self, AudioError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        if channels == 0 {
            return Err(AudioError::UnsupportedWav("zero channels".into()));
        }
        let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<Result<_, _>>()?,
            (hound::SampleFormat::Float, 32) => {
                reader.samples::<f32>().collect::<Result<_, _>>()?
            }
            (format, bits) => {
                return Err(AudioError::UnsupportedWav(format!(
                    "{format:?} at {bits} bits (supported: 16-bit PCM, 32-bit float)"
                )))
            }
        };
        let samples = if channels == 1 {
            interleaved
        } else {
            interleaved
                .chunks_exact(channels)
                .map(|frame| frame.iter().sum::<f32>() / channels as f32)
                .collect()
        };
        Self::new(samples, spec.sample_rate)
    }

    /// Write the buffer as a mono 16-bit PCM wav file.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), AudioError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

/// One pitch estimate per video frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchFrame {
    /// Fundamental frequency, or `None` for unvoiced frames.
    pub f0_hz: Option<f64>,
    pub confidence: f64,
}

impl PitchFrame {
    pub const UNVOICED: PitchFrame = PitchFrame {
        f0_hz: None,
        confidence: 0.0,
    };
}

/// Frame-synchronous pitch track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub fps: f64,
    pub frames: Vec<PitchFrame>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame: usize) -> Option<&PitchFrame> {
        self.frames.get(frame)
    }

    /// Export as `frame,f0_hz,confidence` with an empty f0 field on unvoiced
    /// frames.
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), AudioError> {
        writeln!(out, "frame,f0_hz,confidence")?;
        for (i, frame) in self.frames.iter().enumerate() {
            match frame.f0_hz {
                Some(f0) => writeln!(out, "{i},{f0},{}", frame.confidence)?,
                None => writeln!(out, "{i},,{}", frame.confidence)?,
            }
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead, fps: f64) -> Result<Self, AudioError> {
        let mut frames = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("frame")) {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 3 {
                return Err(AudioError::MalformedCsv {
                    line: lineno + 1,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let f0_hz = if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse::<f64>().map_err(|e| AudioError::MalformedCsv {
                    line: lineno + 1,
                    message: format!("bad f0: {e}"),
                })?)
            };
            let confidence = fields[2].parse::<f64>().map_err(|e| AudioError::MalformedCsv {
                line: lineno + 1,
                message: format!("bad confidence: {e}"),
            })?;
            frames.push(PitchFrame { f0_hz, confidence });
        }
        Ok(Self { fps, frames })
    }
}

/// A run of voiced frames oscillating within the vibrato window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibratoSpan {
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub center_f0: f64,
}

/// Pitch detector settings. The analysis window is 2048 samples at 44.1 kHz
/// and scales with the sample rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchParams {
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Absolute threshold on the normalized difference minimum; frames whose
    /// minimum stays above it are unvoiced.
    pub threshold: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        Self {
            fmin_hz: 60.0,
            fmax_hz: 1600.0,
            threshold: 0.15,
        }
    }
}

const BASE_WINDOW: f64 = 2048.0;
const BASE_RATE: f64 = 44100.0;

/// One pitch estimate per video frame, each from an analysis window centered
/// on the frame timestamp.
pub fn detect_pitch(
    audio: &AudioBuffer,
    fps: f64,
    params: &PitchParams,
) -> Result<PitchTrack, AudioError> {
    if audio.samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if !(params.fmin_hz > 0.0) || params.fmin_hz >= params.fmax_hz {
        return Err(AudioError::InvalidRange {
            fmin: params.fmin_hz,
            fmax: params.fmax_hz,
        });
    }
    let sr = audio.sample_rate as f64;
    let window = ((BASE_WINDOW * sr / BASE_RATE).round() as usize).max(64) & !1;
    if audio.samples.len() < window {
        return Err(AudioError::TooShort {
            samples: audio.samples.len(),
            needed: window,
        });
    }

    let half = window / 2;
    let tau_min = ((sr / params.fmax_hz).floor() as usize).max(2);
    let tau_max = ((sr / params.fmin_hz).ceil() as usize).min(half - 1);
    if tau_min >= tau_max {
        return Err(AudioError::InvalidRange {
            fmin: params.fmin_hz,
            fmax: params.fmax_hz,
        });
    }

    let frame_count = (audio.samples.len() as f64 / sr * fps).round() as usize;
    let mut frames = Vec::with_capacity(frame_count);
    let mut diff = vec![0.0f64; tau_max + 1];
    let mut cmndf = vec![0.0f64; tau_max + 1];

    for frame in 0..frame_count {
        let center = (frame as f64 / fps * sr).round() as usize;
        let start = center
            .saturating_sub(half)
            .min(audio.samples.len() - window);
        let x = &audio.samples[start..start + window];
        frames.push(analyze_window(
            x, half, tau_min, tau_max, sr, params, &mut diff, &mut cmndf,
        ));
    }
    Ok(PitchTrack { fps, frames })
}

fn analyze_window(
    x: &[f32],
    half: usize,
    tau_min: usize,
    tau_max: usize,
    sr: f64,
    params: &PitchParams,
    diff: &mut [f64],
    cmndf: &mut [f64],
) -> PitchFrame {
    // Difference function d(tau) over the first half of the window.
    for tau in 1..=tau_max {
        let mut sum = 0.0f64;
        for i in 0..half {
            let d = (x[i] - x[i + tau]) as f64;
            sum += d * d;
        }
        diff[tau] = sum;
    }

    // Cumulative mean normalization; silence (zero running sum) maps to 1.
    cmndf[0] = 1.0;
    let mut running = 0.0f64;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmndf[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    // Absolute threshold: first dip below, then follow it to its local
    // minimum.
    let mut tau = tau_min;
    while tau <= tau_max && cmndf[tau] >= params.threshold {
        tau += 1;
    }
    if tau > tau_max {
        return PitchFrame::UNVOICED;
    }
    while tau < tau_max && cmndf[tau + 1] < cmndf[tau] {
        tau += 1;
    }

    let refined = parabolic_minimum(cmndf, tau, tau_max);
    let f0 = (sr / refined).clamp(params.fmin_hz, params.fmax_hz);
    PitchFrame {
        f0_hz: Some(f0),
        confidence: (1.0 - cmndf[tau]).clamp(0.0, 1.0),
    }
}

fn parabolic_minimum(values: &[f64], tau: usize, tau_max: usize) -> f64 {
    if tau == 0 || tau >= tau_max {
        return tau as f64;
    }
    let (s0, s1, s2) = (values[tau - 1], values[tau], values[tau + 1]);
    let denom = 2.0 * (2.0 * s1 - s2 - s0);
    if denom.abs() < 1e-30 {
        tau as f64
    } else {
        tau as f64 + (s2 - s0) / denom
    }
}

/// Signed interval from `f2` to `f1` in cents: `1200 * log2(f1 / f2)`.
pub fn cents_between(f1: f64, f2: f64) -> Result<f64, AudioError> {
    if !(f1 > 0.0) {
        return Err(AudioError::InvalidFrequency(f1));
    }
    if !(f2 > 0.0) {
        return Err(AudioError::InvalidFrequency(f2));
    }
    Ok(1200.0 * (f1 / f2).log2())
}

/// Vibrato detector settings. `window_cents` mirrors the +/-30 cent rule;
/// requiring an oscillation keeps steady notes from registering, and can be
/// switched off for the strict literal rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct VibratoParams {
    pub window_cents: f64,
    pub min_span_frames: usize,
    pub require_oscillation: bool,
}

impl Default for VibratoParams {
    fn default() -> Self {
        Self {
            window_cents: 30.0,
            min_span_frames: 6,
            require_oscillation: true,
        }
    }
}

/// Maximal runs of consecutive voiced frames whose deviation from the run
/// median stays within the cents window (and oscillates around it, unless
/// disabled). Spans never overlap and never include unvoiced frames.
pub fn detect_vibrato(track: &PitchTrack, params: &VibratoParams) -> Vec<VibratoSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    let n = track.frames.len();
    while i < n {
        let Some(first) = track.frames[i].f0_hz else {
            i += 1;
            continue;
        };
        // Scan forward for the largest j such that [i..=j] satisfies the
        // median window. The condition is not monotone in j (a later frame
        // can rebalance the median), so keep scanning until the total cents
        // span exceeds twice the window; past that point both extremes are
        // locked in and no extension can ever qualify again.
        let mut sorted = vec![first];
        let mut best_j = i;
        let mut j = i + 1;
        while j < n {
            let Some(f0) = track.frames[j].f0_hz else { break };
            let at = sorted.partition_point(|v| *v < f0);
            sorted.insert(at, f0);
            let span_cents = cents_between(sorted[sorted.len() - 1], sorted[0])
                .expect("voiced frequencies are positive");
            if span_cents > 2.0 * params.window_cents {
                break;
            }
            if window_holds(&sorted, params.window_cents) {
                best_j = j;
            }
            j += 1;
        }

        let run: Vec<f64> = track.frames[i..=best_j]
            .iter()
            .map(|f| f.f0_hz.expect("run is voiced"))
            .collect();
        let median = median_of_sorted(&{
            let mut s = run.clone();
            s.sort_by(f64::total_cmp);
            s
        });
        let qualifies = run.len() >= params.min_span_frames.max(1)
            && (!params.require_oscillation || has_oscillation(&run, median));
        if qualifies {
            spans.push(VibratoSpan {
                start_frame: i,
                end_frame: best_j,
                center_f0: median,
            });
        }
        i = best_j + 1;
    }
    spans
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Both extremes within the window of the median; equivalent to every member
/// being within it.
fn window_holds(sorted: &[f64], window_cents: f64) -> bool {
    let median = median_of_sorted(sorted);
    let hi = cents_between(sorted[sorted.len() - 1], median).unwrap_or(f64::INFINITY);
    let lo = cents_between(median, sorted[0]).unwrap_or(f64::INFINITY);
    hi <= window_cents && lo <= window_cents
}

/// True when the cents deviation from the median changes sign at least once
/// (zero deviations are skipped).
fn has_oscillation(run: &[f64], median: f64) -> bool {
    let mut last_sign = 0i8;
    for f0 in run {
        let dev = cents_between(*f0, median).unwrap_or(0.0);
        let sign = if dev > 1e-9 {
            1
        } else if dev < -1e-9 {
            -1
        } else {
            0
        };
        if sign != 0 {
            if last_sign != 0 && sign != last_sign {
                return true;
            }
            last_sign = sign;
        }
    }
    false
}

/// Clap detector settings: short-time energy in a 5 ms window against the
/// median energy of the preceding background.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ClapParams {
    /// Trigger factor over the median background energy.
    pub spike_factor: f64,
    /// Background lookback, seconds.
    pub background_seconds: f64,
    /// Minimum background needed before a block may trigger, seconds.
    pub min_context_seconds: f64,
}

impl Default for ClapParams {
    fn default() -> Self {
        Self {
            spike_factor: 20.0,
            background_seconds: 0.5,
            min_context_seconds: 0.1,
        }
    }
}

/// First sample index whose 5 ms energy block exceeds `spike_factor` times
/// the median energy of the preceding background.
pub fn detect_clap(audio: &AudioBuffer, params: &ClapParams) -> Result<usize, AudioError> {
    if audio.samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let sr = audio.sample_rate as f64;
    let block = ((0.005 * sr).round() as usize).max(1);
    let energies: Vec<f64> = audio
        .samples
        .chunks(block)
        .map(|c| c.iter().map(|s| (*s as f64) * (*s as f64)).sum())
        .collect();
    let lookback = ((params.background_seconds * sr / block as f64).round() as usize).max(1);
    let min_context = ((params.min_context_seconds * sr / block as f64).round() as usize).max(1);

    for (b, &energy) in energies.iter().enumerate() {
        if b < min_context {
            continue;
        }
        let from = b.saturating_sub(lookback);
        let mut background: Vec<f64> = energies[from..b].to_vec();
        background.sort_by(f64::total_cmp);
        let median = background[background.len() / 2];
        if energy > params.spike_factor * median.max(1e-12) {
            return Ok(b * block);
        }
    }
    Err(AudioError::NoClapFound)
}

/// Video frame index of audio time zero:
/// `clap_video_frame - round(clap_sample * fps / sample_rate)`.
/// A pitch-track entry for video frame `f` lives at index `f - offset`.
pub fn align_streams(clap_sample: usize, clap_video_frame: usize, sample_rate: u32, fps: f64) -> i64 {
    let audio_frame = (clap_sample as f64 * fps / sample_rate as f64).round() as i64;
    clap_video_frame as i64 - audio_frame
}

/// Pitch at a video frame through the alignment offset.
pub fn pitch_at_video_frame(track: &PitchTrack, offset: i64, video_frame: usize) -> PitchFrame {
    let idx = video_frame as i64 - offset;
    if idx < 0 {
        return PitchFrame::UNVOICED;
    }
    track
        .frames
        .get(idx as usize)
        .copied()
        .unwrap_or(PitchFrame::UNVOICED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine(freq: f64, seconds: f64, sr: u32) -> AudioBuffer {
        let n = (seconds * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32 * 0.5)
            .collect();
        AudioBuffer::new(samples, sr).unwrap()
    }

    fn sawtooth(freq: f64, seconds: f64, sr: u32) -> AudioBuffer {
        let n = (seconds * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| {
                let phase = (freq * i as f64 / sr as f64).fract();
                (2.0 * phase - 1.0) as f32 * 0.5
            })
            .collect();
        AudioBuffer::new(samples, sr).unwrap()
    }

    fn max_abs_cents(track: &PitchTrack, reference: f64) -> f64 {
        track
            .frames
            .iter()
            .filter_map(|f| f.f0_hz)
            .map(|f0| cents_between(f0, reference).unwrap().abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn pure_sine_within_one_cent() {
        let audio = sine(440.0, 1.0, 44100);
        let track = detect_pitch(&audio, 30.0, &PitchParams::default()).unwrap();
        assert_eq!(track.len(), 30);
        assert!(track.frames.iter().all(|f| f.f0_hz.is_some()));
        assert!(max_abs_cents(&track, 440.0) < 1.0);
    }

    #[test]
    fn silence_is_unvoiced() {
        let audio = AudioBuffer::new(vec![0.0; 44100], 44100).unwrap();
        let track = detect_pitch(&audio, 30.0, &PitchParams::default()).unwrap();
        assert!(track.frames.iter().all(|f| f.f0_hz.is_none()));
    }

    #[test]
    fn sawtooth_at_cello_c2_within_25_cents() {
        let f0 = 65.406;
        let audio = sawtooth(f0, 1.0, 44100);
        let track = detect_pitch(&audio, 30.0, &PitchParams::default()).unwrap();
        let voiced: Vec<f64> = track.frames.iter().filter_map(|f| f.f0_hz).collect();
        assert!(!voiced.is_empty());
        let ok = voiced
            .iter()
            .filter(|f| cents_between(**f, f0).unwrap().abs() <= 25.0)
            .count();
        assert!(
            ok as f64 >= 0.99 * voiced.len() as f64,
            "{ok}/{} within 25 cents",
            voiced.len()
        );
    }

    #[test]
    fn empty_audio_is_an_error() {
        let audio = AudioBuffer::new(vec![], 44100).unwrap();
        assert!(matches!(
            detect_pitch(&audio, 30.0, &PitchParams::default()),
            Err(AudioError::EmptyAudio)
        ));
    }

    #[test]
    fn cents_examples() {
        assert_relative_eq!(cents_between(440.0, 440.0).unwrap(), 0.0);
        assert_relative_eq!(cents_between(880.0, 440.0).unwrap(), 1200.0);
        assert!((cents_between(466.16, 440.0).unwrap() - 100.0).abs() < 0.1);
        assert!(matches!(
            cents_between(0.0, 440.0),
            Err(AudioError::InvalidFrequency(_))
        ));
    }

    #[test]
    fn cents_antisymmetric_and_additive() {
        let (a, b, c) = (220.0, 330.0, 495.5);
        assert_relative_eq!(
            cents_between(a, b).unwrap(),
            -cents_between(b, a).unwrap(),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            cents_between(a, c).unwrap(),
            cents_between(a, b).unwrap() + cents_between(b, c).unwrap(),
            epsilon = 1e-9
        );
    }

    fn track_from(f0s: &[Option<f64>]) -> PitchTrack {
        PitchTrack {
            fps: 30.0,
            frames: f0s
                .iter()
                .map(|f| PitchFrame {
                    f0_hz: *f,
                    confidence: 0.9,
                })
                .collect(),
        }
    }

    #[test]
    fn vibrato_detected_on_oscillation() {
        // +/-25 cents around 220 Hz at 6 Hz for one second at 30 fps.
        let frames: Vec<Option<f64>> = (0..30)
            .map(|i| {
                let cents = 25.0 * (2.0 * std::f64::consts::PI * 6.0 * i as f64 / 30.0).sin();
                Some(220.0 * 2f64.powf(cents / 1200.0))
            })
            .collect();
        let spans = detect_vibrato(&track_from(&frames), &VibratoParams::default());
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].start_frame, 0);
        assert_eq!(spans[0].end_frame, 29);
        assert!((spans[0].center_f0 - 220.0).abs() < 2.0);
    }

    #[test]
    fn stepwise_scale_yields_no_spans() {
        let mut frames = Vec::new();
        for step in 0..5 {
            let f0 = 220.0 * 2f64.powf(step as f64 * 100.0 / 1200.0);
            frames.extend(std::iter::repeat_n(Some(f0), 8));
        }
        assert!(detect_vibrato(&track_from(&frames), &VibratoParams::default()).is_empty());
    }

    #[test]
    fn constant_pitch_yields_no_spans() {
        let frames = vec![Some(220.0); 30];
        assert!(detect_vibrato(&track_from(&frames), &VibratoParams::default()).is_empty());
        // With the oscillation requirement off, the literal rule flags it.
        let strict = VibratoParams {
            require_oscillation: false,
            ..Default::default()
        };
        assert_eq!(detect_vibrato(&track_from(&frames), &strict).len(), 1);
    }

    #[test]
    fn vibrato_spans_do_not_cover_unvoiced_frames() {
        let mut frames: Vec<Option<f64>> = Vec::new();
        for i in 0..40 {
            if (15..20).contains(&i) {
                frames.push(None);
            } else {
                let cents = 20.0 * (2.0 * std::f64::consts::PI * 6.0 * i as f64 / 30.0).sin();
                frames.push(Some(220.0 * 2f64.powf(cents / 1200.0)));
            }
        }
        let spans = detect_vibrato(&track_from(&frames), &VibratoParams::default());
        for span in &spans {
            for f in span.start_frame..=span.end_frame {
                assert!(frames[f].is_some());
            }
        }
        assert!(spans.iter().all(|s| s.end_frame < 15 || s.start_frame >= 20));
    }

    #[test]
    fn clap_impulse_located_within_one_block() {
        let mut samples = vec![0.0f32; 88200];
        samples[44100] = 1.0;
        let audio = AudioBuffer::new(samples, 44100).unwrap();
        let at = detect_clap(&audio, &ClapParams::default()).unwrap();
        assert!((at as i64 - 44100).unsigned_abs() <= 220, "found {at}");
    }

    #[test]
    fn uniform_noise_has_no_clap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<f32> = (0..44100).map(|_| rng.gen::<f32>() * 0.02 - 0.01).collect();
        let audio = AudioBuffer::new(samples, 44100).unwrap();
        assert!(matches!(
            detect_clap(&audio, &ClapParams::default()),
            Err(AudioError::NoClapFound)
        ));
    }

    #[test]
    fn first_of_two_claps_wins() {
        let mut samples = vec![0.0f32; 132300];
        samples[22050] = 1.0;
        samples[88200] = 1.0;
        let audio = AudioBuffer::new(samples, 44100).unwrap();
        let at = detect_clap(&audio, &ClapParams::default()).unwrap();
        assert!((at as i64 - 22050).unsigned_abs() <= 220);
    }

    #[test]
    fn align_streams_examples() {
        assert_eq!(align_streams(0, 0, 44100, 30.0), 0);
        assert_eq!(align_streams(44100, 45, 44100, 30.0), 15);
        assert_eq!(align_streams(22050, 15, 44100, 30.0), 0);
    }

    #[test]
    fn align_round_trip() {
        // Regenerating the clap at the mapped frame time reproduces the offset.
        for &(sample, frame) in &[(13230usize, 21usize), (70560, 3), (0, 7)] {
            let offset = align_streams(sample, frame, 44100, 30.0);
            let audio_frame = frame as i64 - offset;
            let regenerated = (audio_frame as f64 / 30.0 * 44100.0).round() as usize;
            assert_eq!(align_streams(regenerated, frame, 44100, 30.0), offset);
        }
    }

    #[test]
    fn pitch_lookup_respects_offset() {
        let track = track_from(&[Some(100.0), Some(200.0), Some(300.0)]);
        assert_eq!(pitch_at_video_frame(&track, 1, 2).f0_hz, Some(200.0));
        assert_eq!(pitch_at_video_frame(&track, 0, 5).f0_hz, None);
        assert_eq!(pitch_at_video_frame(&track, 2, 1).f0_hz, None);
    }

    #[test]
    fn wav_round_trip() {
        let dir = std::env::temp_dir().join("stringcap_wav_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tone.wav");
        let audio = sine(220.0, 0.1, 44100);
        audio.write_wav(&path).unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 44100);
        assert_eq!(back.samples.len(), audio.samples.len());
        let max_err = audio
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-3);
    }

    #[test]
    fn pitch_csv_round_trip() {
        let track = track_from(&[Some(220.0), None, Some(440.5)]);
        let mut buf = Vec::new();
        track.write_csv(&mut buf).unwrap();
        let back = PitchTrack::read_csv(std::io::BufReader::new(buf.as_slice()), 30.0).unwrap();
        assert_eq!(back, track);
    }
}
