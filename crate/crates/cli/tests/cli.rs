use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motion_studio_core::archetypes::Archetype;
use motion_studio_core::moa_metrics::MoaReport;
use motion_studio_core::teleop::EventLog;
use motion_studio_core::{Channel, InputEvent, Keyframe, Sequence, Target, TrajectoryLog};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_motion-studio"));
    c.env_remove("MOTION_STUDIO_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_seq(dir: &TempDir, name: &str, seq: &Sequence) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, seq.to_json()).unwrap();
    path
}

fn two_second_swing() -> Sequence {
    Sequence::new(
        "swing",
        "planar2",
        vec![Channel::new(
            Target::Joint(0),
            vec![Keyframe::linear(0.0, 0.0), Keyframe::linear(2.0, 0.5)],
        )],
    )
    .unwrap()
}

#[test]
fn play_writes_one_row_per_sample_with_sidecar() {
    let dir = TempDir::new().unwrap();
    let seq = write_seq(&dir, "swing.json", &two_second_swing());
    let out = dir.path().join("swing.csv");
    ok(&["play", p(&seq), "--out", p(&out)]);
    let log = TrajectoryLog::load(&out).unwrap();
    assert_eq!(log.rows.len(), 201);
    assert_eq!(log.model, "planar2");
    assert!(TrajectoryLog::sidecar_path(&out).is_file());
}

#[test]
fn play_rejects_channel_for_missing_joint() {
    let dir = TempDir::new().unwrap();
    let bad = Sequence::new(
        "bad",
        "planar2",
        vec![Channel::new(
            Target::Joint(5),
            vec![Keyframe::linear(0.0, 0.0)],
        )],
    )
    .unwrap();
    let seq = write_seq(&dir, "bad.json", &bad);
    let out = run(&["play", p(&seq), "--out", p(&dir.path().join("x.csv"))]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(
        err.contains("joint index 5") && err.contains("channels[0]"),
        "{err}"
    );
}

#[test]
fn unknown_model_lists_builtins() {
    let dir = TempDir::new().unwrap();
    let seq = write_seq(&dir, "swing.json", &two_second_swing());
    let out = run(&["play", p(&seq), "--model", "nope", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("gen3lite-like"));
}

#[test]
fn analyze_gentle_archetype() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("gentle.csv");
    ok(&["synth", "gentle-direct", "--out", p(&log)]);
    let report = dir.path().join("report.json");
    let text = dir.path().join("report.txt");
    let series = dir.path().join("series.csv");
    let intended = dir.path().join("intended.json");
    std::fs::write(&intended, r#"{"spatial": "Multidirectional"}"#).unwrap();
    ok(&[
        "analyze",
        p(&log),
        "--out",
        p(&report),
        "--text",
        p(&text),
        "--series",
        p(&series),
        "--impressions",
        "calm",
        "--intended",
        p(&intended),
    ]);
    let r = MoaReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.classification.spatial.to_string(), "Unidirectional");
    assert_eq!(r.flags.len(), 1);
    assert_eq!(r.impressions.as_deref(), Some("calm"));
    let text = std::fs::read_to_string(&text).unwrap();
    assert!(text.contains("Movement parameter analysis"));
    let series = std::fs::read_to_string(&series).unwrap();
    assert!(series.starts_with("t,speed,jerk"));
    assert_eq!(
        series.lines().count(),
        Archetype::GentleDirect.log().rows.len() + 1
    );
}

#[test]
fn analyze_too_short_log_fails() {
    let dir = TempDir::new().unwrap();
    let mut log = Archetype::GentleDirect.log();
    log.rows.truncate(2);
    let path = dir.path().join("short.csv");
    log.save(&path).unwrap();
    let out = run(&["analyze", p(&path), "--out", p(&dir.path().join("r.json"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("too short"), "{}", stderr(&out));
}

#[test]
fn default_and_explicit_default_config_agree() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("d.csv");
    ok(&["synth", "darting", "--out", p(&log)]);
    let cfg = dir.path().join("metrics.json");
    std::fs::write(
        &cfg,
        motion_studio_core::moa_metrics::MetricConfig::default().to_json(),
    )
    .unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    ok(&["analyze", p(&log), "--out", p(&a)]);
    ok(&["analyze", p(&log), "--config", p(&cfg), "--out", p(&b)]);
    let out = bin()
        .args(["analyze", p(&log), "--out", p(&c)])
        .env("MOTION_STUDIO_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = std::fs::read(&a).unwrap();
    assert_eq!(a, std::fs::read(&b).unwrap());
    assert_eq!(a, std::fs::read(&c).unwrap());
}

#[test]
fn replay_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let events = EventLog::new(vec![
        InputEvent::axis(0.1, "stick_y", 0.8),
        InputEvent::press(0.4, "triangle"),
        InputEvent::axis(0.5, "stick_y", -0.5),
        InputEvent::axis(0.9, "stick_y", 0.0),
    ]);
    let ev = dir.path().join("events.json");
    std::fs::write(&ev, events.to_json()).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["replay", p(&ev), "--model", "planar2", "--out", p(&a)]);
    ok(&["replay", p(&ev), "--model", "planar2", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = TrajectoryLog::load(&a).unwrap();
    assert_eq!(log.rows.len(), 191);
    assert!(log.rows.last().unwrap().q[0] > 0.05);
}

#[test]
fn empty_replay_holds_initial_pose() {
    let dir = TempDir::new().unwrap();
    let ev = dir.path().join("events.json");
    std::fs::write(&ev, EventLog::new(Vec::new()).to_json()).unwrap();
    let out = dir.path().join("r.csv");
    ok(&["replay", p(&ev), "--model", "planar2", "--out", p(&out)]);
    let log = TrajectoryLog::load(&out).unwrap();
    assert_eq!(log.rows.len(), 101);
    assert!(log.rows.iter().all(|r| r.q == log.rows[0].q));
}

#[test]
fn validate_detects_kinds_and_rejects_bad_files() {
    let dir = TempDir::new().unwrap();
    let seq = write_seq(&dir, "s.json", &two_second_swing());
    let log = dir.path().join("l.csv");
    ok(&["synth", "darting", "--out", p(&log)]);
    let bindings = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/config/bindings.default.json"
    );
    let out = ok(&["validate", p(&seq), p(&log), bindings]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Sequence") && stdout.contains("Log") && stdout.contains("Bindings"));

    let future = dir.path().join("future.json");
    let mut v: serde_json::Value = serde_json::from_str(&two_second_swing().to_json()).unwrap();
    v["version"] = 99.into();
    std::fs::write(&future, v.to_string()).unwrap();
    let out = run(&["validate", p(&future)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("99"), "{}", stderr(&out));

    let garbage = dir.path().join("g.json");
    std::fs::write(&garbage, "[1, 2").unwrap();
    assert!(!run(&["validate", p(&garbage)]).status.success());
}
