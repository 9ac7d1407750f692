use std::path::{Path, PathBuf};
use std::time::Duration;

use vwc_core::runner::{self, RunOverrides, RunSpec};
use vwc_core::session::{read_log, LogRecord, StepOutcome};

fn asset(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(rel)
}

fn spec(scene: &str, script: &str, out: &Path) -> RunSpec {
    RunSpec {
        scene: asset(scene),
        script: asset(script),
        duration_ms: None,
        out_dir: out.to_path_buf(),
        haptic_port: 0,
        overrides: RunOverrides::default(),
    }
}

fn check_collision_scenario(scene: &str, script: &str) {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(scene, script, dir.path());
    let summary = runner::run(&s, None).unwrap();
    assert!(summary.committed > 0, "{summary:?}");
    assert!(summary.rejected_collision > 0, "{summary:?}");
    assert!(!summary.violated(), "{:?}", summary.replay.violations);
    assert_eq!(summary.replay.rejected_with_force, summary.replay.rejected);
    assert!(summary.replay.min_distance_mm.unwrap() > 0.0);
    assert!(s.trajectory_path().exists() && s.timing_path().exists());

    let log = read_log(&s.state_log_path()).unwrap();
    let rejected: Vec<_> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) if s.outcome == StepOutcome::RejectedCollision => Some(s),
            _ => None,
        })
        .collect();
    assert!(rejected.iter().all(|r| r.state.is_none() && r.force_n.norm() > 0.0));
}

#[test]
fn solid_into_wall() {
    check_collision_scenario("scenes/solid_wall.json", "scripts/push_x.json");
}

#[test]
fn robot_into_block() {
    check_collision_scenario("scenes/robot_block.json", "scripts/robot_push.json");
}

#[test]
fn mannequin_hand_into_table() {
    check_collision_scenario("scenes/mannequin_table.json", "scripts/hand_down.json");
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = spec("scenes/solid_wall.json", "scripts/push_x.json", a.path());
    let sb = spec("scenes/solid_wall.json", "scripts/push_x.json", b.path());
    runner::run(&sa, None).unwrap();
    runner::run(&sb, None).unwrap();
    let la = std::fs::read(sa.state_log_path()).unwrap();
    let lb = std::fs::read(sb.state_log_path()).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, lb);
}

#[test]
fn manual_recording_and_clutch_from_script() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("scenes/solid_wall.json", "scripts/free_drag.json", dir.path());
    let summary = runner::run(&s, None).unwrap();
    assert_eq!(summary.rejected_collision, 0);
    let traj = vwc_core::session::load_trajectory(&s.trajectory_path()).unwrap();
    assert_eq!(traj.len(), 2);
    // Two strokes of -30 mm in y with the clutch released in between.
    assert!((traj[0].pose.position.y + 30.0).abs() < 1e-9, "{traj:?}");
    assert!((traj[1].pose.position.y + 60.0).abs() < 1e-9, "{traj:?}");
}

#[test]
fn distance_recording_from_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec("scenes/solid_wall.json", "scripts/push_x.json", dir.path());
    s.overrides = RunOverrides::load(&asset("configs/record_distance.json")).unwrap();
    s.duration_ms = Some(1500.0);
    let summary = runner::run(&s, None).unwrap();
    assert!(summary.waypoints >= 5, "{summary:?}");
}

#[test]
fn missing_scene_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("scenes/nope.json", "scripts/push_x.json", dir.path());
    let e = runner::run(&s, None).unwrap_err();
    assert!(e.to_string().contains("nope.json"), "{e}");
}

#[test]
fn stall_does_not_stop_the_servo() {
    let r = runner::bench_run(Duration::from_millis(1500), Some(Duration::from_millis(500))).unwrap();
    assert!(r.ticks > 1000, "{r:?}");
}
