use std::path::Path;
use std::process::{Command, Output};

fn run(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_palpbench"))
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = run(data, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bench_workflow_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    let doc = ok(data, &["phantom", "template", "blocks"]);
    assert!(doc.starts_with("format: 1"));
    ok(data, &["phantom", "template", "blocks", "--save", "blocks"]);
    let file = data.join("copy.phantom");
    std::fs::write(&file, &doc).unwrap();
    ok(data, &["phantom", "import", file.to_str().unwrap(), "--id", "copy"]);
    std::fs::write(&file, "format: 1\nname: broken\n").unwrap();
    assert_eq!(run(data, &["phantom", "import", file.to_str().unwrap(), "--id", "bad"]).status.code(), Some(1));

    let table = data.join("train.csv");
    ok(data, &["collect", "--phantom", "blocks", "--out", table.to_str().unwrap(), "--seed", "5"]);
    let t = table.to_str().unwrap();
    ok(data, &["train", "svm", "--id", "m", "--features", t]);
    ok(data, &["train", "mlp", "--id", "n", "--features", t, "--sensors", "force", "--epochs", "50", "--hidden", "8"]);
    let eval = ok(data, &["eval", "--model", "m", "--features", t]);
    assert!(eval.contains("accuracy"), "{eval}");

    let out = data.join("report");
    ok(data, &["report", "--features", t, "--model", "m", "--out", out.to_str().unwrap()]);
    for f in ["pca.png", "pca_force.png", "pca_left.png", "pca_right.png", "stiffness.csv", "summary.json", "confusion.png", "confusion.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pca_per_sensor"].as_object().unwrap().len(), 3);
    assert!(summary["assumptions"][0].as_str().unwrap().contains("palpation depth"));

    let cal = ok(data, &["calibrate", "--id", "cal", "--phantom", "blocks"]);
    assert!(cal.contains("residual") && cal.contains("3x3 grid"), "{cal}");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(data.join("calibrations/cal.json")).unwrap()).unwrap();
    assert_eq!(doc["grid"], serde_json::json!([3, 3]));
    ok(data, &["scan", "raster", "--id", "r", "--phantom", "blocks", "--model", "m", "--origin", "90.5,90.5", "--nx", "3", "--ny", "3", "--step", "3"]);
    ok(data, &["scan", "spokes", "--id", "s", "--phantom", "blocks", "--calibration", "cal", "--model", "m", "--roi", "300,220;340,220;340,260;300,260", "--n-spokes", "4", "--step", "2", "--max-radius", "6"]);
    let replay = data.join("replayed");
    ok(data, &["replay", "--id", "r", "--out", replay.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(replay.join("features.csv")).unwrap(),
        std::fs::read(data.join("sessions/r/features.csv")).unwrap()
    );

    let out = run(data, &["scan", "raster", "--id", "r", "--phantom", "blocks", "--origin", "90,90", "--nx", "1", "--ny", "1", "--step", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already exists"));
    let out = run(data, &["scan", "spokes", "--id", "t", "--phantom", "blocks", "--roi", "1,1;2,2;3,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run(data, &["resume", "--id", "r"]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["scan", "raster", "--id", "x"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["train", "forest", "--id", "x", "--features", "a.csv"]).status.code(), Some(2));
}
