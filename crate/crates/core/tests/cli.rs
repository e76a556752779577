use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use walkdir::WalkDir;

fn splatstream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatstream")).args(args).output().expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path and contents of every file under `root`, in a stable order.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}

fn small_synth(out: &Path, seed: &str) {
    let o = splatstream(&[
        "synth", "--seed", seed, "--gaussians", "150", "--frames", "4", "--eval-views", "2", "--width", "48",
        "--height", "40", "--out", path_arg(out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_with_same_seed_writes_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = splatstream(&["synth", "--seed", "1", "--out", path_arg(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.iter().any(|(p, _)| p == "manifest.toml"));
    assert_eq!(sa.len(), sb.len());
    for ((pa, da), (pb, db)) in sa.iter().zip(&sb) {
        assert_eq!(pa, pb);
        assert!(da == db, "{pa} differs");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = splatstream(&["stream", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(splatstream(&[]).status.code(), Some(1));
    assert_eq!(splatstream(&["--help"]).status.code(), Some(0));
}

#[test]
fn stream_with_missing_file_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_synth(&seq, "3");
    fs::remove_file(seq.join("frames/0002/camera.toml")).unwrap();
    let o = splatstream(&["stream", path_arg(&seq), "--out", path_arg(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("frames/0002/camera.toml"), "{stderr}");
}

#[test]
fn malformed_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_synth(&seq, "3");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "tau_mask = \"high\"\n").unwrap();
    let out = dir.path().join("out");
    let o = splatstream(&["stream", path_arg(&seq), "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stream_writes_report_renders_and_scene() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_synth(&seq, "4");
    let cfg = dir.path().join("stream.toml");
    fs::write(&cfg, "predictor = \"iou_heuristic\"\ntau_mask = 0.2\n").unwrap();
    let out = dir.path().join("out");
    let o = splatstream(&[
        "stream", path_arg(&seq), "--config", path_arg(&cfg), "--tau-mask", "0.4", "--out", path_arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["predictor"], "iou_heuristic");
    assert_eq!(report["tau_mask"], 0.4);
    assert_eq!(report["frames"].as_array().unwrap().len(), 4);
    for f in ["metrics.txt", "eval_00.png", "eval_01.png", "scene.ply"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn eval_prints_threshold_table() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_synth(&seq, "5");
    let out = dir.path().join("out");
    let o = splatstream(&[
        "eval", path_arg(&seq), "--predictor", "iou_heuristic", "--taus", "0.1,0.3,0.5", "--out", path_arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(table, fs::read_to_string(out.join("metrics.txt")).unwrap());
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("τ") && lines[0].contains("LPIPS↓") && lines[0].contains("c-ratio↑"), "{table}");
    assert!(lines[2].starts_with("No Mask"));
    assert_eq!(lines.len(), 6, "{table}");
    assert!(out.join("metrics.json").is_file());
}

#[test]
fn render_and_gir_commands() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    small_synth(&seq, "6");
    let scene = seq.join("scene.ply");
    let camera = seq.join("frames/0000/camera.toml");
    let out = dir.path().join("out");
    let o = splatstream(&["render", "--scene", path_arg(&scene), "--camera", path_arg(&camera), "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("render.png").is_file() && out.join("render.fim").is_file());
    let o = splatstream(&[
        "gir", "--scene", path_arg(&scene), "--camera", path_arg(&camera), "--strategy", "nearest", "--out",
        path_arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gir = splatstream::gir::deserialize_gir(&fs::read(out.join("gir.bin")).unwrap()).unwrap();
    assert_eq!((gir.width, gir.height), (48, 40));
    assert!(gir.occupied().count() > 0);
}
