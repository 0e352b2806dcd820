use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fruitpush(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fruitpush")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path, seed: u64, difficulty: &str) {
    let out =
        fruitpush(&["synth", "--seed", &seed.to_string(), "--difficulty", difficulty, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn run(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let rgb = scene.join("rgb.png");
    let depth = scene.join("depth.png");
    let mut args =
        vec!["run", "--rgb", rgb.to_str().unwrap(), "--depth", depth.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fruitpush(&args)
}

#[test]
fn synth_writes_images_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 2, "cluttered");
    for f in ["rgb.png", "depth.png", "truth.json", "scene.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("truth.json")).unwrap()).unwrap();
    let ratio = truth["occlusion_ratio"].as_f64().unwrap();
    assert!((0.1..=0.5).contains(&ratio));
}

#[test]
fn run_emits_plan_report_and_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, 7, "single_branch");
    let out = tmp.path().join("out");
    let res = run(&scene, &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["status"], "plan");
    assert!(plan["plan"]["magnitude"].as_f64().unwrap() > 0.0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["timings"].as_array().unwrap().iter().all(|t| t["ms"].as_f64().unwrap() >= 0.0));
    assert!(out.join("overlay.png").is_file());

    let again = tmp.path().join("again");
    assert_eq!(run(&scene, &again, &[]).status.code(), Some(0));
    assert_eq!(fs::read(out.join("plan.json")).unwrap(), fs::read(again.join("plan.json")).unwrap());

    let redrawn = tmp.path().join("redrawn.png");
    let res = fruitpush(&[
        "overlay",
        "--rgb",
        scene.join("rgb.png").to_str().unwrap(),
        "--report",
        out.join("report.json").to_str().unwrap(),
        "--out",
        redrawn.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(fs::read(out.join("overlay.png")).unwrap(), fs::read(&redrawn).unwrap());
}

#[test]
fn no_detected_lines_gives_no_candidate_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene, 7, "single_branch");
    // No line can reach this many votes, so nothing is detected.
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"hough": {"vote_threshold": 100000}}"#).unwrap();
    let res = run(&scene, &tmp.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["status"], "no_candidate");
    assert!(plan["plan"].is_null());
}

#[test]
fn input_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = run(&tmp.path().join("nowhere"), &tmp.path().join("out"), &[]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("[load]"));

    let scene = tmp.path().join("scene");
    synth(&scene, 1, "single_branch");
    let blank = fruitpush::imaging::DepthImage::<f64>::zeros(640, 480);
    fruitpush::imaging::io::save_depth_png(&blank, &scene.join("depth.png")).unwrap();
    let empty = run(&scene, &tmp.path().join("out"), &[]);
    assert_eq!(empty.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("[load]"));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"d_roi": 0}"#).unwrap();
    let bad = run(&scene, &tmp.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));

    assert_eq!(fruitpush(&["eval", "--n", "0"]).status.code(), Some(3));
    assert_eq!(fruitpush(&["run"]).status.code(), Some(3));
}

#[test]
fn eval_summary_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let res = fruitpush(&[
            "eval",
            "--n",
            "3",
            "--difficulty",
            "multi_branch",
            "--seed",
            "40",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&res.stdout).contains("occluder accuracy"));
    }
    assert_eq!(fs::read(dirs[0].join("summary.json")).unwrap(), fs::read(dirs[1].join("summary.json")).unwrap());
}
