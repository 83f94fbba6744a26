use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn monolabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monolabel"))
        .args(args)
        .env_remove("MONOLABEL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    monolabel(args).status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scene(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let scene = dir.path().join("scene");
    let mut args = vec!["simulate", "--seed", "17", "--out", s(&scene), "--n-objects", "6", "--n-frames", "20"];
    args.extend_from_slice(extra);
    assert_eq!(code(&args), 0);
    scene
}

#[test]
fn staged_commands_reproduce_run() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(&dir, &["--moving-fraction", "0.2"]);
    let p = |name: &str| dir.path().join(name);
    assert_eq!(code(&["triangulate", "--scene", s(&scene), "--out", s(&p("points.jsonl"))]), 0);
    assert_eq!(code(&["cluster", "--scene", s(&scene), "--points", s(&p("points.jsonl")), "--out", s(&p("clusters.jsonl"))]), 0);
    assert_eq!(code(&["fit", "--scene", s(&scene), "--clusters", s(&p("clusters.jsonl")), "--out", s(&p("fit.jsonl"))]), 0);
    assert_eq!(code(&["select", "--scene", s(&scene), "--labels", s(&p("fit.jsonl")), "--out", s(&p("labels.jsonl"))]), 0);
    assert_eq!(code(&["run", "--scene", s(&scene), "--out", s(&p("run"))]), 0);
    for (staged, full) in [("points.jsonl", "points.jsonl"), ("clusters.jsonl", "clusters.jsonl"), ("labels.jsonl", "labels.jsonl")] {
        let a = std::fs::read(p(staged)).unwrap();
        let b = std::fs::read(p("run").join(full)).unwrap();
        assert_eq!(a, b, "{staged} differs from run output");
    }
    for f in ["report.json", "report.txt", "pr_curves.csv"] {
        assert!(p("run").join(f).exists(), "missing {f}");
    }
    assert_eq!(
        code(&["eval", "--scene", s(&scene), "--labels", s(&p("labels.jsonl")), "--out", s(&p("report.json"))]),
        0
    );
    assert_eq!(std::fs::read(p("report.json")).unwrap(), std::fs::read(p("run").join("report.json")).unwrap());
}

#[test]
fn stages_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_scene(&dir, &[]);
    let b = dir.path().join("again");
    assert_eq!(code(&["simulate", "--seed", "17", "--out", s(&b), "--n-objects", "6", "--n-frames", "20"]), 0);
    for f in ["frames.jsonl", "boxes2d.jsonl", "observations.jsonl", "truth.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let labels = dir.path().join("labels.jsonl");
    let run = dir.path().join("run");
    assert_eq!(code(&["run", "--scene", s(&a), "--out", s(&run), "--no-eval"]), 0);
    assert!(!run.join("report.json").exists());
    std::fs::copy(run.join("labels.jsonl"), &labels).unwrap();
    let once = dir.path().join("m1.jsonl");
    let twice = dir.path().join("m2.jsonl");
    for out in [&once, &twice] {
        let args = ["merge", "--strategy", "keep-initial", "--initial", s(&labels), "--predicted", s(&labels), "--out", s(out)];
        assert_eq!(code(&args), 0);
    }
    assert_eq!(std::fs::read(&once).unwrap(), std::fs::read(&twice).unwrap());
    assert_eq!(std::fs::read(&once).unwrap(), std::fs::read(&labels).unwrap());
    let replaced = dir.path().join("r.jsonl");
    assert_eq!(code(&["merge", "--strategy", "replace", "--predicted", s(&labels), "--out", s(&replaced)]), 0);
    let text = std::fs::read_to_string(&replaced).unwrap();
    assert!(text.lines().all(|l| l.contains("\"tag\":\"predicted\"") && l.contains("\"iteration\":1")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    // degenerate or unreadable input
    assert_eq!(code(&["run", "--scene", s(&missing), "--out", s(&out)]), 4);
    // configuration errors
    assert_eq!(code(&["simulate", "--out", s(&out)]), 2);
    assert_eq!(code(&["simulate", "--seed", "1", "--out", s(&out), "--moving-fraction", "1.5"]), 2);
    assert_eq!(code(&["--threads", "0", "simulate", "--seed", "1", "--out", s(&out)]), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[cluster]\ntheta = 0\n").unwrap();
    assert_eq!(code(&["--config", s(&bad), "simulate", "--seed", "1", "--out", s(&out)]), 2);
    std::fs::write(&bad, "[nonsense]\nx = 1\n").unwrap();
    assert_eq!(code(&["--config", s(&bad), "simulate", "--seed", "1", "--out", s(&out)]), 2);
    let env = Command::new(env!("CARGO_BIN_EXE_monolabel"))
        .args(["simulate", "--seed", "1", "--out", s(&out)])
        .env("MONOLABEL_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
    // a stationary camera cannot be triangulated
    let parked = dir.path().join("parked");
    let cfg = dir.path().join("parked.toml");
    std::fs::write(&cfg, "[sim]\ncamera_speed = 0.0\nn_objects = 4\nn_frames = 5\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "simulate", "--seed", "2", "--out", s(&parked)]), 0);
    let points = dir.path().join("points.jsonl");
    assert_eq!(code(&["triangulate", "--scene", s(&parked), "--out", s(&points)]), 3);
    assert_eq!(std::fs::read_to_string(&points).unwrap(), "");
    let run = dir.path().join("parked_run");
    assert_eq!(code(&["run", "--scene", s(&parked), "--out", s(&run)]), 3);
    let labels = std::fs::read_to_string(run.join("labels.jsonl")).unwrap();
    assert!(labels.lines().count() > 0 && labels.lines().all(|l| l.contains("\"has_3d\":false")));
}

#[test]
fn corrupted_scene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(&dir, &[]);
    let obs = scene.join("observations.jsonl");
    let mut text = std::fs::read_to_string(&obs).unwrap();
    text.push_str("{\"point_id\":1,\"frame_id\":9999,\"u\":1.0,\"v\":1.0}\n");
    std::fs::write(&obs, text).unwrap();
    let out = monolabel(&["run", "--scene", s(&scene), "--out", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    std::fs::write(&obs, "{\"point_id\":1,\"frame_id\":0,\"u\":1.0}\n").unwrap();
    assert_eq!(code(&["run", "--scene", s(&scene), "--out", s(&dir.path().join("out"))]), 4);
}
