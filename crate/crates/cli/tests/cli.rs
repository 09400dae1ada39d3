use std::path::Path;
use std::process::{Command, Output};

fn drr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = drr(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&["phantom", "--out", s(&data)]);
    // one candidate keeps the run short
    let sweep = data.join("sweep.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sweep).unwrap()).unwrap();
    v["theta_h_deg"] = serde_json::json!([0.0]);
    v["theta_v_deg"] = serde_json::json!([0.0]);
    std::fs::write(data.join("sweep1.json"), v.to_string()).unwrap();
    data
}

#[test]
fn pipeline_resume_and_editing() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantom(dir.path());
    let out = dir.path().join("run");
    let (manifest, sweep) = (data.join("cases.jsonl"), data.join("sweep1.json"));
    let args = [
        "pipeline",
        "--manifest",
        s(&manifest),
        "--sweep",
        s(&sweep),
        "--criterion",
        "max_lung_overlap",
        "--out",
        s(&out),
        "--jobs",
        "2",
        "--resume",
    ];
    let first = ok(&args);
    assert!(first.contains("0 failed"), "{first}");
    let report = std::fs::read(out.join("report.json")).unwrap();
    let second = ok(&args);
    assert!(second.contains("0 stages computed"), "{second}");
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), report);

    ok(&["edit", "export", "--manifest", s(&manifest), "--case", "phantom01", "--out", s(&out)]);
    let edited = out.join("phantom01/edit/tma_edit.pgm");
    assert!(edited.exists());
    let msg = ok(&[
        "edit",
        "import",
        "--manifest",
        s(&manifest),
        "--case",
        "phantom01",
        "--edited",
        s(&edited),
        "--out",
        s(&out),
    ]);
    assert!(msg.contains("Dice 1.0000"), "{msg}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("bad.json");
    std::fs::write(&sweep, r#"{"theta_h_deg": []}"#).unwrap();
    let manifest = dir.path().join("cases.jsonl");
    std::fs::write(&manifest, "").unwrap();
    let o = drr(&[
        "pipeline",
        "--manifest",
        s(&manifest),
        "--sweep",
        s(&sweep),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = drr(&["pipeline", "--manifest", s(&manifest), "--criterion", "bogus", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn partial_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantom(dir.path());
    let manifest = dir.path().join("cases.jsonl");
    let mut text = std::fs::read_to_string(data.join("cases.jsonl")).unwrap();
    text = text.replace("\"ct.mhd\"", &format!("\"{}\"", s(&data.join("ct.mhd"))));
    text.push_str("{\"case_id\": \"broken\", \"label\": \"covid19\", \"xr_path\": \"missing.f32\"}\n");
    std::fs::write(&manifest, text).unwrap();
    let o = drr(&[
        "pipeline",
        "--manifest",
        s(&manifest),
        "--sweep",
        s(&data.join("sweep1.json")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn project_register_transfer_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantom(dir.path());
    let d = dir.path();
    let geom = ["--width", "256", "--height", "256", "--pitch", "1.6", "--target-spacing", "2.0"];
    let with = |base: &[&str]| -> Vec<String> { base.iter().chain(geom.iter()).map(|x| x.to_string()).collect() };
    let run = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>());

    let sxr = d.join("sxr.f32");
    run(with(&["project", "--ct", s(&data.join("ct.mhd")), "--out", s(&sxr), "--preview", s(&d.join("sxr.pgm"))]));
    assert!(sxr.exists() && d.join("sxr.json").exists() && d.join("sxr.pgm").exists());
    let lung = d.join("lung.pgm");
    run(with(&["project", "--mask", s(&data.join("ct_lung.mhd")), "--out", s(&lung)]));
    let lesion = d.join("lesion.pgm");
    run(with(&["project", "--mask", s(&data.join("ct_lesion.mhd")), "--out", s(&lesion)]));

    let result = d.join("reg.json");
    ok(&[
        "register",
        "--moving",
        s(&sxr),
        "--fixed",
        s(&data.join("xr.f32")),
        "--moving-roi",
        s(&lung),
        "--fixed-roi",
        s(&data.join("xr_lung.pgm")),
        "--out",
        s(&result),
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert!((r["tx"].as_f64().unwrap() - 4.0).abs() < 0.5, "{r}");
    assert!((r["ty"].as_f64().unwrap() + 3.0).abs() < 0.5, "{r}");

    let tma = d.join("tma.pgm");
    ok(&[
        "transfer",
        "--mask",
        s(&lesion),
        "--transform",
        s(&result),
        "--like",
        s(&data.join("xr.f32")),
        "--out",
        s(&tma),
    ]);
    let out = ok(&["eval", "dice", s(&tma), s(&data.join("xma.pgm"))]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["dice"].as_f64().unwrap() >= 0.8, "{out}");
}

#[test]
fn auc_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.csv");
    std::fs::write(&p, "score,label\n0.9,1\n0.4,0\n0.4,1\n0.1,0\n").unwrap();
    let out = ok(&["eval", "auc", s(&p)]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["auc"].as_f64(), Some(0.875));
    std::fs::write(&p, "score,label\n0.9,1\n0.4,1\n").unwrap();
    assert_eq!(drr(&["eval", "auc", s(&p)]).status.code(), Some(1));
}
