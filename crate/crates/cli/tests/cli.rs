use std::path::Path;
use std::process::{Command, Output};

fn semstyle(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semstyle"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) {
    let text = format!(
        r#"{{"manifest": "data/manifest.csv", "output": "model.json", "seed": 1,
            "network": {{"hidden": [8, 8]}},
            "hyper": {{"epochs": 2{extra}}}}}"#
    );
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&semstyle(&[], dir.path())), 1);
    assert_eq!(code(&semstyle(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&semstyle(&["select", "m.csv"], dir.path())), 1);
    assert_eq!(code(&semstyle(&["--help"], dir.path())), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = semstyle(&["segment", "missing.png"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.png"));
    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    assert_eq!(code(&semstyle(&["train", "bad.json"], dir.path())), 2);
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = semstyle(&["scenes", "data", "--count", "4", "--size", "48", "--demo-style"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("data/manifest.csv").exists());
    assert!(d.join("data/style.json").exists());

    let out = semstyle(&["segment", "data/scene0000.png", "--vis", "seg.png"], d);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("segments"));
    assert!(d.join("seg.png").exists());

    let out = semstyle(
        &["features", "data/scene0000.png", "data/scene0000_labels.png", "--csv", "f.csv", "--categories", "data/categories.txt"],
        d,
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("feature dimension 153"));
    let csv = std::fs::read_to_string(d.join("f.csv")).unwrap();
    assert!(csv.starts_with("segment,x,y,label,f0,"));

    write_config(d, "style.json", "");
    let out = semstyle(&["train", "style.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("model.json").exists());

    let out = semstyle(
        &["enhance", "model.json", "data/scene0001.png", "data/scene0001_labels.png", "-o", "out.png"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("out.png").exists());
    let out = semstyle(
        &["enhance", "model.json", "data/scene0001.png", "data/scene0001_labels.png", "--watercolor", "-o", "wc.png"],
        d,
    );
    assert_eq!(code(&out), 0);

    std::fs::write(d.join("two.txt"), "a\nb\n").unwrap();
    let out = semstyle(
        &["enhance", "model.json", "data/scene0001.png", "data/scene0001_labels.png", "--categories", "two.txt"],
        d,
    );
    assert_eq!(code(&out), 2);

    let out = semstyle(&["eval", "model.json", "data/manifest.csv", "--report", "report.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("mean error"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 4);

    let out = semstyle(&["select", "data/manifest.csv", "-m", "2", "-k", "8", "-o", "sel.csv"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sel = std::fs::read_to_string(d.join("sel.csv")).unwrap();
    assert_eq!(sel.lines().count(), 3);

    let out = semstyle(&["synth", "data/style.json", "data/manifest.csv", "-o", "synth", "--scatter", "scatter.csv"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("synth/manifest.csv").exists());
    assert!(d.join("synth/categories.txt").exists());
    let scatter = std::fs::read_to_string(d.join("scatter.csv")).unwrap();
    assert!(scatter.starts_with("image,x,y,category,"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&semstyle(&["scenes", "data", "--count", "2", "--size", "40", "--demo-style"], d)), 0);
    write_config(d, "wild.json", r#", "learning_rate": 1e200, "max_grad_norm": null"#);
    let out = semstyle(&["train", "wild.json"], d);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
