//! End-to-end runs of the `stringcap` binary: synth -> refine -> metrics,
//! the vision-only path, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_stringcap")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(binary())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stringcap_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn synth_refine_metrics_round_trip() {
    let dir = tmp_dir("round_trip");
    let synth = run(&["synth", "--export-dir", "scene", "--seed", "9"], &dir);
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    for file in [
        "calibration.json",
        "keypoints.json",
        "audio.wav",
        "skeleton.json",
        "instrument.json",
        "ground_truth.json",
    ] {
        assert!(dir.join("scene").join(file).exists(), "missing {file}");
    }

    let refine = run(
        &[
            "refine",
            "--calibration",
            "scene/calibration.json",
            "--keypoints",
            "scene/keypoints.json",
            "--audio",
            "scene/audio.wav",
            "--instrument",
            "scene/instrument.json",
            "--skeleton",
            "scene/skeleton.json",
            "--clap-frame",
            "6",
            "--export-dir",
            "run",
        ],
        &dir,
    );
    assert!(refine.status.success(), "{}", String::from_utf8_lossy(&refine.stderr));
    assert!(dir.join("run/scene.json").exists());

    let metrics = run(
        &[
            "metrics",
            "--scene",
            "run/scene.json",
            "--ground-truth",
            "scene/ground_truth.json",
            "--export-dir",
            "run",
        ],
        &dir,
    );
    assert!(metrics.status.success(), "{}", String::from_utf8_lossy(&metrics.stderr));
    let stdout = String::from_utf8_lossy(&metrics.stdout);
    assert!(stdout.contains("baseline:") && stdout.contains("refined:"), "{stdout}");
    assert!(dir.join("run/report.json").exists());
    assert!(dir.join("run/report.csv").exists());
}

#[test]
fn no_audio_flag_runs_vision_only() {
    let dir = tmp_dir("no_audio");
    assert!(run(&["synth", "--export-dir", "scene"], &dir).status.success());
    let refine = run(
        &[
            "refine",
            "--calibration",
            "scene/calibration.json",
            "--keypoints",
            "scene/keypoints.json",
            "--no-audio",
            "--export-dir",
            "baseline",
        ],
        &dir,
    );
    assert!(refine.status.success(), "{}", String::from_utf8_lossy(&refine.stderr));
    let text = std::fs::read_to_string(dir.join("baseline/scene.json")).unwrap();
    let scene: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(scene["frames"]
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["binding"].is_null()));
}

#[test]
fn pitch_subcommand_writes_csv() {
    let dir = tmp_dir("pitch");
    assert!(run(&["synth", "--export-dir", "scene"], &dir).status.success());
    let pitch = run(
        &["pitch", "--audio", "scene/audio.wav", "--export-dir", "track"],
        &dir,
    );
    assert!(pitch.status.success());
    let csv = std::fs::read_to_string(dir.join("track/pitch.csv")).unwrap();
    assert!(csv.starts_with("frame,f0_hz,confidence"));
    assert!(csv.lines().count() > 200);
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tmp_dir("exit_codes");
    std::fs::write(dir.join("garbage.json"), "{ not json").unwrap();
    let bad_file = run(
        &[
            "triangulate",
            "--calibration",
            "garbage.json",
            "--keypoints",
            "garbage.json",
            "--export-dir",
            "out",
        ],
        &dir,
    );
    assert_eq!(bad_file.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&bad_file.stderr);
    assert!(stderr.contains("garbage.json"), "{stderr}");

    let missing_arg = run(&["refine", "--keypoints", "x.json"], &dir);
    assert_eq!(missing_arg.status.code(), Some(1));

    let help = run(&["--help"], &dir);
    assert_eq!(help.status.code(), Some(0));
}
