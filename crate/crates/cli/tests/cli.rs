use std::fs;
use std::path::{Path, PathBuf};

use epistitch_cli::*;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["epistitch"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CREASE_SPEC: &str = r#"{
  "planes": [{"normal": [-0.6, 0.0, 1.0], "d": -6.0}, {"normal": [0.6, 0.0, 1.0], "d": -6.0}],
  "plane_points": 300
}"#;

/// Synthesizes the crease pair into `dir/pair`.
fn synth(dir: &Path, spec: &str) -> PathBuf {
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, spec).unwrap();
    let out = dir.join("pair");
    assert_eq!(run(&["synth", "--spec", s(&spec_path), "--out-dir", s(&out)]), EXIT_OK);
    out
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), CREASE_SPEC);
    let b = dir.path().join("again");
    assert_eq!(run(&["synth", "--spec", s(&dir.path().join("spec.json")), "--out-dir", s(&b)]), EXIT_OK);
    for f in ["ref.png", "tgt.png", "matches.json", "calib.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stitch_end_to_end_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synth(dir.path(), CREASE_SPEC);
    let out = |tag: &str| dir.path().join(tag);
    for tag in ["a", "b"] {
        let code = run(&[
            "stitch",
            s(&pair.join("ref.png")),
            s(&pair.join("tgt.png")),
            "--matches",
            s(&pair.join("matches.json")),
            "--out",
            s(&out(&format!("{tag}.png"))),
            "--calib-out",
            s(&out(&format!("{tag}.calib.json"))),
            "--metrics-out",
            s(&out(&format!("{tag}.metrics.json"))),
            "--seed",
            "3",
        ]);
        assert_eq!(code, EXIT_OK);
    }
    for ext in ["png", "calib.json", "metrics.json"] {
        assert_eq!(fs::read(out(&format!("a.{ext}"))).unwrap(), fs::read(out(&format!("b.{ext}"))).unwrap());
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out("a.metrics.json")).unwrap()).unwrap();
    assert!(metrics["ssim"].as_f64().unwrap() >= 0.95);

    // eval reproduces the stitch-time metrics from the written calibration
    let report = out("eval.json");
    let code = run(&[
        "eval",
        "--pano",
        s(&out("a.png")),
        "--calib",
        s(&out("a.calib.json")),
        "--matches",
        s(&pair.join("matches.json")),
        "--ref",
        s(&pair.join("ref.png")),
        "--tgt",
        s(&pair.join("tgt.png")),
        "--out",
        s(&report),
    ]);
    assert_eq!(code, EXIT_OK);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(eval, metrics);

    let geo = out("geo.json");
    let code = run(&[
        "eval",
        "--pano",
        s(&out("a.png")),
        "--calib",
        s(&out("a.calib.json")),
        "--matches",
        s(&pair.join("matches.json")),
        "--out",
        s(&geo),
    ]);
    assert_eq!(code, EXIT_OK);
    let geo: serde_json::Value = serde_json::from_str(&fs::read_to_string(&geo).unwrap()).unwrap();
    assert_eq!(geo["projectivity_mean_px"], metrics["projectivity_mean_px"]);
    assert!(geo.get("ssim").is_none());

    // a panorama from another calibration does not fit the canvas
    let code = run(&[
        "eval",
        "--pano",
        s(&pair.join("ref.png")),
        "--calib",
        s(&out("a.calib.json")),
        "--matches",
        s(&pair.join("matches.json")),
    ]);
    assert_eq!(code, EXIT_OTHER);
}

#[test]
fn estimate_writes_a_loadable_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synth(dir.path(), CREASE_SPEC);
    let out = dir.path().join("c.json");
    let code = run(&[
        "estimate",
        s(&pair.join("ref.png")),
        s(&pair.join("tgt.png")),
        "--matches",
        s(&pair.join("matches.json")),
        "--calib-out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let c = epistitch::io::load_calibration(&out).unwrap();
    assert!(c.h_inf.determinant().abs() > 0.0);
}

fn write_matches(dir: &Path, rows: &[[f64; 4]]) -> PathBuf {
    let p = dir.join("m.json");
    let m = serde_json::json!({"version": 1, "size1": [640, 480], "size2": [640, 480], "matches": rows});
    fs::write(&p, m.to_string()).unwrap();
    p
}

#[test]
fn error_paths_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synth(dir.path(), CREASE_SPEC);
    let (r, t) = (pair.join("ref.png"), pair.join("tgt.png"));
    let stitch = |m: &Path, extra: &[&str]| {
        let mut args = vec!["stitch", s(&r), s(&t), "--matches", s(m), "--out"];
        let out = dir.path().join("x.png");
        let out = out.to_str().unwrap().to_owned();
        args.push(&out);
        args.extend_from_slice(extra);
        run(&args)
    };

    let seven: Vec<[f64; 4]> = (0..7).map(|i| [10.0 * i as f64, 20.0, 10.0 * i as f64, 20.0]).collect();
    assert_eq!(stitch(&write_matches(dir.path(), &seven), &[]), EXIT_INSUFFICIENT);

    // collinear points: no F and no homography
    let line: Vec<[f64; 4]> = (0..30).map(|i| [20.0 * i as f64, 100.0, 20.0 * i as f64 + 5.0, 100.0]).collect();
    assert_eq!(stitch(&write_matches(dir.path(), &line), &[]), EXIT_DEGENERATE);

    let outside = vec![[700.0, 1.0, 1.0, 1.0]; 8];
    assert_eq!(stitch(&write_matches(dir.path(), &outside), &[]), EXIT_IO);

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "not json").unwrap();
    assert_eq!(stitch(&garbage, &[]), EXIT_IO);
    assert_eq!(stitch(&dir.path().join("missing.json"), &[]), EXIT_IO);

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"warp": {"canvas_cap": 1.0}}"#).unwrap();
    assert_eq!(stitch(&pair.join("matches.json"), &["--config", s(&cfg)]), EXIT_CANVAS);

    assert_eq!(stitch(&pair.join("matches.json"), &["--rho", "-1"]), EXIT_OTHER);
    assert_eq!(run(&["bogus"]), EXIT_OTHER);
    assert_eq!(run(&["stitch"]), EXIT_OTHER);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn stitch_without_matches_uses_the_builtin_matcher() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synth(dir.path(), CREASE_SPEC);
    let out = dir.path().join("p.png");
    let code = run(&["stitch", s(&pair.join("ref.png")), s(&pair.join("tgt.png")), "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.exists());
}
