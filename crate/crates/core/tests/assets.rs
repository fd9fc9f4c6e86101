//! The shipped asset files must load and agree with the built-in defaults.

use std::path::PathBuf;
use stringcap::config::PipelineConfig;
use stringcap::instrument::InstrumentKind;
use stringcap::io;
use stringcap::kinematics::{HandSkeleton, JOINT_COUNT};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

#[test]
fn shipped_skeleton_is_the_default_adult_hand() {
    let shipped = io::load_skeleton(asset("skeleton_adult.json")).unwrap();
    let built_in = HandSkeleton::default_adult();
    for j in 0..JOINT_COUNT {
        assert_eq!(shipped.parent(j), built_in.parent(j));
        assert!((shipped.bone_length(j) - built_in.bone_length(j)).abs() < 1e-12);
        if j != 0 {
            let a = shipped.rest_direction(j).into_inner();
            let b = built_in.rest_direction(j).into_inner();
            assert!((a - b).norm() < 1e-12, "joint {j}");
        }
    }
    assert!(
        (shipped.palm_facing().into_inner() - built_in.palm_facing().into_inner()).norm() < 1e-12
    );
}

#[test]
fn shipped_instrument_presets_load() {
    let cello = io::load_instrument_config(asset("cello.json")).unwrap();
    assert_eq!(cello.kind, InstrumentKind::Cello);
    assert_eq!(cello.tunings(), InstrumentKind::Cello.tunings_hz());
    let violin = io::load_instrument_config(asset("violin.json")).unwrap();
    assert_eq!(violin.kind, InstrumentKind::Violin);
    assert_eq!(violin.fundamental_length(), 0.325);
}

#[test]
fn shipped_config_matches_defaults() {
    let shipped = io::load_pipeline_config(asset("config.toml")).unwrap();
    let default = PipelineConfig::default();
    let a = serde_json::to_value(&shipped).unwrap();
    let b = serde_json::to_value(&default).unwrap();
    assert_eq!(a, b, "assets/config.toml drifted from the code defaults");
}
