//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measurements (visible under `--nocapture`).
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

use nalgebra::{Point3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use stringcap::audio::{cents_between, detect_pitch, detect_vibrato, AudioBuffer, PitchFrame, PitchParams, PitchTrack, VibratoParams};
use stringcap::config::PipelineConfig;
use stringcap::geometry::{triangulate_ransac, Observation2D, RansacParams};
use stringcap::instrument::{vibrating_length_for_pitch, InstrumentKind, StringSpec};
use stringcap::kinematics::{
    align_wrist, forward_kinematics, forward_kinematics_local, Finger, HandPose, HandSkeleton,
    Rotation6D, JOINT_COUNT,
};
use stringcap::metrics::{contact_deviation, mpjpe};
use stringcap::pipeline::{run_pipeline, SceneOutput};
use stringcap::refine::{refine_finger_ik, BindingDecision, IkParams};
use stringcap::synth::{camera_ring, generate_scene, GroundTruthScene, NoteSpec, SynthConfig};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Criterion 1: the pitch / vibrating-length relation inverts to 1e-9
/// relative over 1,000 random pairs per instrument, in under a second.
#[test]
fn criterion_1_length_relation_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for kind in [InstrumentKind::Cello, InstrumentKind::Violin] {
        let length = kind.fundamental_length_m();
        for (i, fundamental) in kind.tunings_hz().into_iter().enumerate() {
            let string = StringSpec::new(
                format!("{kind:?}-{i}"),
                fundamental,
                Point3::new(0.0, 0.0, length),
                Point3::origin(),
            )
            .unwrap();
            for _ in 0..250 {
                let vibrating = (1e-3 + rng.gen::<f64>() * (1.0 - 1e-3)) * length;
                let pitch = fundamental * length / vibrating;
                let recovered = vibrating_length_for_pitch(pitch, &string, 0.0).unwrap();
                worst = worst.max((recovered - vibrating).abs() / vibrating);
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "criterion 1 (length relation round trip)",
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        &format!("worst relative error {worst:.2e}, {elapsed:.2?}"),
    );
}

/// Criterion 2: >= 99% of voiced frames within 25 cents over 50 harmonic
/// tones spanning 65-1320 Hz at 30 dB SNR, in under 30 seconds.
#[test]
fn criterion_2_pitch_tracker_accuracy() {
    let start = Instant::now();
    let sample_rate = 44100u32;
    let fps = 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut voiced = 0usize;
    let mut within = 0usize;
    for i in 0..50 {
        let midi = 36.0 + (i as f64 * 52.0 / 49.0).round();
        let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);

        // Independent tone synthesis: five harmonics, 30 dB SNR.
        let n = (0.6 * sample_rate as f64) as usize;
        let mut samples: Vec<f32> = (0..n)
            .map(|k| {
                let t = k as f64 / sample_rate as f64;
                let mut v = 0.0;
                for (h, amp) in [1.0, 0.5, 0.25, 0.125, 0.0625].iter().enumerate() {
                    v += amp * (2.0 * std::f64::consts::PI * f0 * (h as f64 + 1.0) * t).sin();
                }
                (v * 0.25) as f32
            })
            .collect();
        let power = samples.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / n as f64;
        let noise_sigma = (power / 1000.0).sqrt(); // 30 dB down
        for s in &mut samples {
            *s += (gaussian(&mut rng) * noise_sigma) as f32;
        }

        let audio = AudioBuffer::new(samples, sample_rate).unwrap();
        let track = detect_pitch(&audio, fps, &PitchParams::default()).unwrap();
        for frame in &track.frames {
            if let Some(found) = frame.f0_hz {
                voiced += 1;
                if cents_between(found, f0).unwrap().abs() <= 25.0 {
                    within += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let ratio = within as f64 / voiced.max(1) as f64;
    report(
        "criterion 2 (pitch tracker accuracy)",
        voiced > 500 && ratio >= 0.99 && elapsed < Duration::from_secs(30),
        &format!("{within}/{voiced} voiced frames within 25 cents ({:.2}%), {elapsed:.2?}", ratio * 100.0),
    );
}

/// Criterion 3: the vibrato rule fires once on a true vibrato, never on a
/// stepwise scale or a steady note.
#[test]
fn criterion_3_vibrato_rule() {
    let track_of = |f0s: Vec<Option<f64>>| PitchTrack {
        fps: 30.0,
        frames: f0s
            .into_iter()
            .map(|f0_hz| PitchFrame {
                f0_hz,
                confidence: 0.9,
            })
            .collect(),
    };
    let params = VibratoParams::default();

    let vibrato: Vec<Option<f64>> = (0..30)
        .map(|i| {
            let cents = 25.0 * (2.0 * std::f64::consts::PI * 6.0 * i as f64 / 30.0).sin();
            Some(220.0 * 2f64.powf(cents / 1200.0))
        })
        .collect();
    let vibrato_spans = detect_vibrato(&track_of(vibrato), &params);

    let mut scale = Vec::new();
    for step in 0..5 {
        let f0 = 220.0 * 2f64.powf(step as f64 * 100.0 / 1200.0);
        scale.extend(std::iter::repeat_n(Some(f0), 10));
    }
    let scale_spans = detect_vibrato(&track_of(scale), &params);

    let steady_spans = detect_vibrato(&track_of(vec![Some(220.0); 40]), &params);

    let one_covering = vibrato_spans.len() == 1
        && vibrato_spans[0].start_frame == 0
        && vibrato_spans[0].end_frame == 29;
    report(
        "criterion 3 (vibrato rule)",
        one_covering && scale_spans.is_empty() && steady_spans.is_empty(),
        &format!(
            "vibrato spans {:?}, scale {}, steady {}",
            vibrato_spans,
            scale_spans.len(),
            steady_spans.len()
        ),
    );
}

/// Criterion 4: robust triangulation over a 12-camera ring, 1,000 points:
/// < 5 mm with 1 px noise and 30% outlier views, < 1e-6 m noiseless, in
/// under 10 seconds.
#[test]
fn criterion_4_triangulation_robustness() {
    let start = Instant::now();
    let target = Point3::new(-0.1, 0.0, 1.2);
    let rig = camera_ring(12, 2.0, target);
    let params = RansacParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut worst_noisy: f64 = 0.0;
    let mut worst_clean: f64 = 0.0;
    for point_index in 0..1000 {
        let truth = Point3::new(
            target.x + rng.gen::<f64>() - 0.5,
            target.y + rng.gen::<f64>() - 0.5,
            target.z + rng.gen::<f64>() * 0.8 - 0.4,
        );
        let clean: Vec<Observation2D> = rig
            .iter()
            .map(|(id, cam)| {
                Observation2D::new(id.clone(), cam.project(&truth).unwrap(), 0.9).unwrap()
            })
            .collect();

        // Noiseless run.
        let mut seeded = ChaCha8Rng::seed_from_u64(1_000_000 + point_index);
        let rec = triangulate_ransac(&clean, &rig, &params, &mut seeded).unwrap();
        worst_clean = worst_clean.max((rec.position - truth).norm());

        // 1 px Gaussian noise everywhere, 30% of the views replaced by
        // uniform in-image outliers.
        let outliers = rand::seq::index::sample(&mut rng, 12, 4);
        let mut noisy = clean.clone();
        for (k, obs) in noisy.iter_mut().enumerate() {
            if outliers.iter().any(|o| o == k) {
                obs.point = Vector2::new(rng.gen::<f64>() * 2656.0, rng.gen::<f64>() * 2300.0);
            } else {
                obs.point += Vector2::new(gaussian(&mut rng), gaussian(&mut rng));
            }
        }
        let mut seeded = ChaCha8Rng::seed_from_u64(2_000_000 + point_index);
        let rec = triangulate_ransac(&noisy, &rig, &params, &mut seeded).unwrap();
        worst_noisy = worst_noisy.max((rec.position - truth).norm());
    }
    let elapsed = start.elapsed();
    report(
        "criterion 4 (triangulation robustness)",
        worst_noisy < 5e-3 && worst_clean < 1e-6 && elapsed < Duration::from_secs(10),
        &format!(
            "worst noisy {:.2} mm, worst clean {:.2e} m, {elapsed:.2?}",
            worst_noisy * 1000.0,
            worst_clean
        ),
    );
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let axis = Unit::new_normalize(Vector3::new(
        rng.gen::<f64>() - 0.5,
        rng.gen::<f64>() - 0.5,
        rng.gen::<f64>() - 0.5,
    ));
    UnitQuaternion::from_axis_angle(&axis, rng.gen::<f64>() * std::f64::consts::PI)
}

fn random_flexed_pose(rng: &mut impl Rng, skeleton: &HandSkeleton) -> HandPose {
    let mut pose = HandPose::identity();
    pose.wrist_rotation = random_rotation(rng);
    pose.wrist_translation = Vector3::new(rng.gen(), rng.gen(), rng.gen());
    for j in 0..JOINT_COUNT {
        if skeleton.is_articulated(j) {
            let axis = skeleton.flexion_axis(j).unwrap();
            pose.set_local_rotation(
                j,
                UnitQuaternion::from_axis_angle(&axis, rng.gen::<f64>() * 1.4),
            );
        }
    }
    pose
}

/// Criterion 5: kinematics fundamentals at scale: 1,000 poses preserve bone
/// lengths to 1e-9, 1,000 rigid transforms recovered to 1e-6, 6D round
/// trips to 1e-12.
#[test]
fn criterion_5_kinematics() {
    let skeleton = HandSkeleton::default_adult();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut worst_bone: f64 = 0.0;
    for _ in 0..1000 {
        let pose = random_flexed_pose(&mut rng, &skeleton);
        let joints = forward_kinematics(&skeleton, &pose);
        for j in 1..JOINT_COUNT {
            let parent = skeleton.parent(j).unwrap();
            let len = (joints[j] - joints[parent]).norm();
            worst_bone = worst_bone.max((len - skeleton.bone_length(j)).abs());
        }
    }

    let mut worst_transform: f64 = 0.0;
    for _ in 0..1000 {
        let pose = random_flexed_pose(&mut rng, &skeleton);
        let local = forward_kinematics_local(&skeleton, &pose);
        let rotation = random_rotation(&mut rng);
        let translation = Vector3::new(rng.gen(), rng.gen(), rng.gen());
        let moved = local.map(|p| Point3::from(rotation * p.coords + translation));
        let fit = align_wrist(&local, &moved, &[1.0; JOINT_COUNT]).unwrap();
        worst_transform = worst_transform
            .max(fit.rotation.angle_to(&rotation))
            .max((fit.translation - translation).norm());
    }

    let mut worst_rot6d: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_rotation(&mut rng).to_rotation_matrix().into_inner();
        let back = Rotation6D::from_matrix(&m).to_matrix().unwrap();
        worst_rot6d = worst_rot6d.max((back - m).abs().max());
    }

    report(
        "criterion 5 (kinematics)",
        worst_bone < 1e-9 && worst_transform < 1e-6 && worst_rot6d < 1e-12,
        &format!(
            "bone length {worst_bone:.2e} m, transform {worst_transform:.2e}, 6d {worst_rot6d:.2e}"
        ),
    );
}

/// Criterion 6: 500 perturb-and-recover refinements land under a
/// millimeter, never regress, and touch nothing outside the bound finger's
/// two joints.
#[test]
fn criterion_6_refinement_contract() {
    let skeleton = HandSkeleton::default_adult();
    let params = IkParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let mut worst_residual: f64 = 0.0;
    for case in 0..500 {
        let finger = Finger::ALL[1 + case % 4];
        let (pip, dip) = finger.flex_joints();

        // A reachable target: the fingertip of an in-bounds true pose.
        let mut truth = random_flexed_pose(&mut rng, &skeleton);
        let pip_axis = skeleton.flexion_axis(pip).unwrap();
        let dip_axis = skeleton.flexion_axis(dip).unwrap();
        let true_pip = 0.15 + rng.gen::<f64>() * 1.6;
        let true_dip = 0.15 + rng.gen::<f64>() * 1.2;
        truth.set_local_rotation(pip, UnitQuaternion::from_axis_angle(&pip_axis, true_pip));
        truth.set_local_rotation(dip, UnitQuaternion::from_axis_angle(&dip_axis, true_dip));
        let target = forward_kinematics(&skeleton, &truth)[finger.tip()];

        // +/- 0.15 rad flexion noise, clamped into bounds.
        let mut noisy = truth.clone();
        let noisy_pip = (true_pip + (rng.gen::<f64>() - 0.5) * 0.3)
            .clamp(params.bounds.pip_min, params.bounds.pip_max);
        let noisy_dip = (true_dip + (rng.gen::<f64>() - 0.5) * 0.3)
            .clamp(params.bounds.dip_min, params.bounds.dip_max);
        noisy.set_local_rotation(pip, UnitQuaternion::from_axis_angle(&pip_axis, noisy_pip));
        noisy.set_local_rotation(dip, UnitQuaternion::from_axis_angle(&dip_axis, noisy_dip));

        let binding = BindingDecision {
            frame_id: case,
            string_index: 0,
            target_point: target,
            finger: Some(finger),
        };
        let result = refine_finger_ik(&noisy, &skeleton, &binding, &params).unwrap();
        worst_residual = worst_residual.max(result.residual);

        for pair in result.residual_trace.windows(2) {
            assert!(pair[1] <= pair[0], "residual increased: {:?}", result.residual_trace);
        }
        for j in 0..JOINT_COUNT {
            if j != pip && j != dip {
                assert_eq!(
                    result.adjusted_pose.local_rotation(j).coords,
                    noisy.local_rotation(j).coords,
                    "case {case}: joint {j} must be bit-identical"
                );
            }
        }
        assert_eq!(result.adjusted_pose.wrist_rotation, noisy.wrist_rotation);
        assert_eq!(result.adjusted_pose.wrist_translation, noisy.wrist_translation);
    }
    report(
        "criterion 6 (refinement contract)",
        worst_residual < 1e-3,
        &format!("worst residual {:.3} mm over 500 cases", worst_residual * 1000.0),
    );
}

fn thousand_frame_notes() -> Vec<NoteSpec> {
    let fingers = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Little];
    let strings = [3usize, 2, 3, 1, 2, 3, 0, 2];
    let fractions = [0.70, 0.80, 0.60, 0.75, 0.85, 0.55, 0.78, 0.66];
    (0..33)
        .map(|i| {
            let mut note = NoteSpec::new(strings[i % 8], fractions[(i * 3) % 8], 30)
                .with_finger(fingers[i % 4]);
            if i % 11 == 5 {
                note = note.with_vibrato();
            }
            note
        })
        .collect()
}

/// Mean contact deviation of the designated fingertip against the true
/// stop, before and after refinement, over stopped ground-truth frames.
fn contact_deviations(scene: &GroundTruthScene, output: &SceneOutput) -> (f64, f64, usize) {
    let mut pre_sum = 0.0;
    let mut post_sum = 0.0;
    let mut count = 0;
    for (truth, out) in scene.frames.iter().zip(&output.frames) {
        let (Some(target), Some(finger)) = (truth.target, truth.finger) else {
            continue;
        };
        let (Some(pre), Some(post)) = (&out.hand_pre, &out.hand_post) else {
            continue;
        };
        pre_sum += contact_deviation(&pre[finger.tip()], &target);
        post_sum += contact_deviation(&post[finger.tip()], &target);
        count += 1;
    }
    (pre_sum / count as f64, post_sum / count as f64, count)
}

/// Criterion 7: directional reproduction of the contact-deviation
/// improvement on a 1,000-frame scene: pre-refinement 15-25 mm; with clean
/// audio the refined mean falls to <= 25% of baseline and <= 5 mm; with
/// 2 px keypoint noise the reduction still reaches 50%. Pipeline runtime
/// under 60 s.
#[test]
fn criterion_7_end_to_end_improvement() {
    let base = SynthConfig {
        notes: thousand_frame_notes(),
        lead_in_frames: 15,
        pose_noise_rad: 0.4,
        seed: 7,
        ..Default::default()
    };

    // Clean-audio scene: flexion noise only.
    let scene = generate_scene(&base).unwrap();
    assert!(scene.frames.len() >= 1000, "scene has {} frames", scene.frames.len());
    let start = Instant::now();
    let output = run_pipeline(&scene.scene_input(), &PipelineConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let (pre, post, frames) = contact_deviations(&scene, &output);

    // Noisy-keypoint scene.
    let noisy_config = SynthConfig {
        keypoint_noise_px: 2.0,
        seed: 17,
        ..base
    };
    let noisy_scene = generate_scene(&noisy_config).unwrap();
    let noisy_output = run_pipeline(&noisy_scene.scene_input(), &PipelineConfig::default()).unwrap();
    let (noisy_pre, noisy_post, _) = contact_deviations(&noisy_scene, &noisy_output);

    let clean_ok = (15.0..=25.0).contains(&pre) && post <= 0.25 * pre && post <= 5.0;
    let noisy_ok = (15.0..=25.0).contains(&noisy_pre) && noisy_post <= 0.5 * noisy_pre;
    report(
        "criterion 7 (end-to-end contact improvement)",
        clean_ok && noisy_ok && elapsed < Duration::from_secs(60),
        &format!(
            "clean {pre:.1} -> {post:.2} mm over {frames} frames ({:.0}% reduction); \
             2px-noise {noisy_pre:.1} -> {noisy_post:.2} mm ({:.0}% reduction); pipeline {elapsed:.2?}",
            (1.0 - post / pre) * 100.0,
            (1.0 - noisy_post / noisy_pre) * 100.0
        ),
    );
}

/// Criterion 8: metric oracle identities, and the no-audio run reproduces
/// the vision-only stages bit for bit.
#[test]
fn criterion_8_metrics_and_vision_baseline() {
    // Metric identities.
    let hand: Vec<Point3<f64>> = (0..JOINT_COUNT)
        .map(|j| Point3::new(j as f64 * 0.011, (j % 5) as f64 * 0.004, (j % 3) as f64 * 0.006))
        .collect();
    let identical = mpjpe(&hand, &hand).unwrap();
    let shifted: Vec<Point3<f64>> = hand
        .iter()
        .map(|p| p + Vector3::new(0.25, -0.4, 0.12))
        .collect();
    let translated = mpjpe(&shifted, &hand).unwrap();
    let mut displaced = hand.clone();
    displaced[7] += Vector3::new(0.021, 0.0, 0.0);
    let single = mpjpe(&displaced, &hand).unwrap();
    let metrics_ok =
        identical == 0.0 && translated.abs() < 1e-9 && (single - 1.0).abs() < 1e-9;

    // Vision-only equivalence.
    let scene = generate_scene(&SynthConfig {
        notes: vec![
            NoteSpec::new(3, 0.7, 20),
            NoteSpec::new(2, 0.8, 20).with_finger(Finger::Middle),
        ],
        keypoint_noise_px: 1.5,
        pose_noise_rad: 0.3,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let full = run_pipeline(&scene.scene_input(), &PipelineConfig::default()).unwrap();
    let mut vision_config = PipelineConfig::default();
    vision_config.stages.audio_enabled = false;
    let vision = run_pipeline(&scene.scene_input(), &vision_config).unwrap();
    let baseline_ok = full.frames.len() == vision.frames.len()
        && full.frames.iter().zip(&vision.frames).all(|(a, b)| {
            a.points == b.points
                && a.hand_pre == b.hand_pre
                && a.instrument == b.instrument
                && a.bow == b.bow
                && b.hand_post == b.hand_pre
        });

    report(
        "criterion 8 (metrics oracle and vision baseline)",
        metrics_ok && baseline_ok,
        &format!(
            "identical {identical}, translated {translated:.2e}, single-joint {single:.6}, \
             vision baseline bit-identical: {baseline_ok}"
        ),
    );
}
