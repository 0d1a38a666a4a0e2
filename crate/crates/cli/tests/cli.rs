use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mafod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mafod"))
        .args(args)
        .env_remove("CREASE_THREADS")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixture("occluded_vessel.json");
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &runs {
        let o = mafod(&["generate", "--spec", p(&spec), "--snr", "6.4", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["clean.sf2d", "clean.png", "noisy.sf2d", "noisy.png", "gt.json", "gt.csv"] {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        let b = std::fs::read(runs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn missing_spec_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mafod(&["generate", "--spec", "/nonexistent/spec.json", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/spec.json"));
}

#[test]
fn malformed_spec_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"kind": "concentric", "size": 64}"#).unwrap();
    let o = mafod(&["generate", "--spec", p(&spec), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error"));
}

#[test]
fn unknown_filter_lists_choices() {
    let o = mafod(&["filter", "-i", "in.png", "-o", "out.png", "--method", "ced"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for m in ["mafod", "ifod", "perona-malik", "multiscale-gaussian", "bilateral"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn help_documents_exit_codes() {
    let out = stdout(&mafod(&["--help"]));
    assert!(out.contains("Exit codes"));
    assert!(out.contains("3  numerical failure"));
}

#[test]
fn diverging_schedule_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = mafod(&["generate", "--preset", "occluded-vessel", "--size", "64", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mafod(&[
        "filter",
        "-i",
        p(&dir.path().join("clean.sf2d")),
        "-o",
        p(&dir.path().join("f.sf2d")),
        "--sigmas",
        "1,2",
        "--tau-max",
        "5",
        "--T",
        "1e8",
        "--M",
        "1",
        "--progress",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn constant_image_gives_empty_curves() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.pgm");
    std::fs::write(&img, "P2\n8 6\n255\n".to_string() + &"128 ".repeat(48)).unwrap();
    let curves = dir.path().join("curves.json");
    let o = mafod(&["extract", "-i", p(&img), "-o", p(&curves)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&curves).unwrap()).unwrap();
    assert_eq!(v["curves"].as_array().unwrap().len(), 0);
}

#[test]
fn identical_curves_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let o = mafod(&["generate", "--spec", p(&fixture("occluded_vessel.json")), "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gt = dir.path().join("gt.json");
    let metrics = dir.path().join("metrics.json");
    let o = mafod(&[
        "evaluate",
        "--ground-truth",
        p(&gt),
        "--curves",
        p(&dir.path().join("gt.csv")),
        "--neighborhood",
        "6",
        "--json",
        p(&metrics),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "E=0.000, p=100%");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(v["E"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["p"].as_f64(), Some(1.0));
}

#[test]
fn filter_extract_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    let o = mafod(&[
        "generate",
        "--spec",
        p(&fixture("occluded_vessel.json")),
        "--snr",
        "6.4",
        "--seed",
        "7",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mafod(&[
        "--threads",
        "1",
        "filter",
        "-i",
        p(&d("noisy.sf2d")),
        "-o",
        p(&d("filtered.sf2d")),
        "--method",
        "mafod",
        "--lambda",
        "0.017",
        "--theta",
        "0.35",
        "--sigmas",
        "0.5:0.5:3.0",
        "--T",
        "20",
        "--M",
        "1000",
        "--reference",
        p(&d("clean.sf2d")),
        "--snapshot-every",
        "10",
        "--snapshot-dir",
        p(&d("snaps")),
        "--scale-map",
        p(&d("scales.png")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("cycle=0 "));
    assert!(d("snaps/iter_000010.sf2d").exists());
    assert!(d("scales.png").exists());
    let o = mafod(&[
        "extract",
        "-i",
        p(&d("filtered.sf2d")),
        "-o",
        p(&d("curves.csv")),
        "--overlay",
        p(&d("overlay.png")),
        "--ground-truth",
        p(&d("gt.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d("overlay.png").exists());
    let o = mafod(&["evaluate", "--ground-truth", p(&d("gt.json")), "--curves", p(&d("curves.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let e: f64 = line.trim().strip_prefix("E=").unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(e < 0.5, "{line}");
    assert!(line.trim().ends_with("p=100%"), "{line}");
}

#[test]
fn pipeline_reruns_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = mafod(&["pipeline", "-c", p(&fixture("experiments/vessel-bilateral.json")), "-o", p(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("bilateral:"));
    let o = mafod(&["pipeline", "-c", p(&a.join("manifest.json")), "-o", p(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["timing"]["total"].as_f64().unwrap() >= 0.0);
    for f in manifest["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn every_fixture_experiment_parses() {
    for entry in std::fs::read_dir(fixture("experiments")).unwrap() {
        let path = entry.unwrap().path();
        mafod::experiment::ExperimentConfig::load(&path)
            .and_then(|c| c.validate().map(|_| c))
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
