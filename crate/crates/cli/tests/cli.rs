use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[scene]
objects = 2
region = [0.15, 0.15, 0.15]

[observation]
resolution = 8

[train]
total_steps = 1000
num_envs = 4
hidden = [16, 16]

[eval]
episodes = 6

[distill]
scenes = 6
samples = 20
holdout_scenes = 2
resolution = 8
sizes = [5, 0]

[distill.supervised]
hidden = [8]
epochs = 5
batch = 4
"#;

fn clutter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clutter")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = clutter(args);
    assert!(
        out.status.success(),
        "clutter {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn train_small(dir: &Path, cfg: &Path) -> PathBuf {
    let run = dir.join("train");
    ok(&["train", "--config", s(cfg), "--out", s(&run)]);
    run
}

#[test]
fn train_one_update_writes_checkpoint_and_curve() {
    let (dir, cfg) = setup();
    let run = train_small(dir.path(), &cfg);
    let curve = fs::read_to_string(run.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2, "{curve}");
    assert!(curve.starts_with("update,step,success_rate"));
    assert!(run.join("checkpoint.json").exists());
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("total_steps = 1000"));
    // The snapshot is complete: defaults not in the input file appear too.
    assert!(snapshot.contains("clip"));
}

#[test]
fn generated_scenes_replay_and_reproduce() {
    let (dir, cfg) = setup();
    let run = train_small(dir.path(), &cfg);
    let ckpt = run.join("checkpoint.json");
    let a = dir.path().join("gen_a");
    let b = dir.path().join("gen_b");
    ok(&["generate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "-n", "10", "--out", s(&a)]);
    ok(&[
        "generate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "-n", "10", "--out", s(&b), "--jobs", "3",
    ]);
    let mut names: Vec<_> = fs::read_dir(a.join("scenes")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 10);
    for name in &names {
        let x = fs::read(a.join("scenes").join(name)).unwrap();
        let y = fs::read(b.join("scenes").join(name)).unwrap();
        assert_eq!(x, y, "{name:?} differs between runs");
    }
    let out = ok(&["replay", s(&a.join("scenes"))]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 10);
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["passed"], true, "{line}");
        assert_eq!(v["bit_exact"], true, "{line}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b), "--jobs", "2"]);
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn tampered_scene_fails_replay() {
    let (dir, cfg) = setup();
    let gen = dir.path().join("gen");
    ok(&["generate", "--config", s(&cfg), "--baseline", "rrs", "-n", "3", "--out", s(&gen)]);
    let scene = gen.join("scenes").join("scene_0000.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scene).unwrap()).unwrap();
    let placement = &mut doc["placements"][0];
    assert!(placement.is_object(), "RRS placed nothing");
    // Release the first object well above the table edge.
    placement["release_position"][0] = serde_json::json!(10.0);
    fs::write(&scene, doc.to_string()).unwrap();
    let out = clutter(&["replay", s(&scene)]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "replay_failed");
}

#[test]
fn unknown_config_key_is_reported_with_path() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train.ppo]\nlearning_rate = 0.1\n").unwrap();
    let out = clutter(&["train", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "parse");
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.ppo"));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let (dir, cfg) = setup();
    let out = clutter(&[
        "eval", "--config", s(&cfg), "--checkpoint", s(&dir.path().join("nope.json")), "--out", s(&dir.path().join("e")),
    ]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn checkpoint_schema_version_is_checked() {
    let (dir, cfg) = setup();
    let run = train_small(dir.path(), &cfg);
    let ckpt = run.join("checkpoint.json");
    let text = fs::read_to_string(&ckpt).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    fs::write(&ckpt, text).unwrap();
    let out = clutter(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&dir.path().join("e"))]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "schema_version");
}

#[test]
fn rrs_eval_suites_write_reports() {
    let (dir, cfg) = setup();
    // Region changes need room around the region.
    let enlarged = dir.path().join("enlarged.toml");
    fs::write(&enlarged, SMALL.replace("[scene]", "[scene]\ntable = \"enlarged\"")).unwrap();
    for suite in ["standard", "generalization", "diversity", "attempts"] {
        let out = dir.path().join(suite);
        let cfg = if suite == "generalization" { &enlarged } else { &cfg };
        ok(&["eval", "--config", s(cfg), "--baseline", "rrs", "--suite", suite, "--episodes", "3", "--out", s(&out)]);
        let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
        let rows = csv.lines().count() - 1;
        let expected = match suite {
            "generalization" => 6,
            "attempts" => 8,
            _ => 1,
        };
        assert_eq!(rows, expected, "{suite}: {csv}");
    }
    assert!(dir.path().join("diversity").join("diversity.pgm").exists());
    let shrink = dir.path().join("shrink");
    ok(&["eval", "--config", s(&enlarged), "--baseline", "rrs", "--change", "shrink", "--episodes", "3", "--out", s(&shrink)]);
    assert!(fs::read_to_string(shrink.join("eval.csv")).unwrap().contains("shrinkage"));
}

#[test]
fn export_then_distill() {
    let (dir, cfg) = setup();
    let exp = dir.path().join("export");
    ok(&["export", "--config", s(&cfg), "--baseline", "rrs", "--out", s(&exp)]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(exp.join("export.json")).unwrap()).unwrap();
    assert_eq!(summary["label_validity"], 1.0);
    assert_eq!(summary["header"]["samples"], 20);
    let dis = dir.path().join("distill");
    let out = ok(&["distill", "--config", s(&cfg), "--dataset", s(&exp.join("dataset.jsonl")), "--out", s(&dis)]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(dis.join("models").join("model_5.json").exists());
    assert!(dis.join("models").join("model_20.json").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dis.join("distill.json")).unwrap()).unwrap();
    assert_eq!(report["label_validity"], 1.0);
}

#[test]
fn checkpoint_and_baseline_are_exclusive() {
    let out = clutter(&["generate", "--baseline", "rrs", "--checkpoint", "x.json"]);
    assert!(!out.status.success());
    let out = clutter(&["generate"]);
    assert!(!out.status.success());
}
