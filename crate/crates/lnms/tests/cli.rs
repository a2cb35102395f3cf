use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "splits": {"train": 6, "val": 2, "test": 4},
  "synth": {"canvas_width": 48, "canvas_height": 48, "nominal_box": [16.0, 16.0]},
  "grid": {"neighborhood": 5},
  "net": {"first_filter_size": 5, "first_filters": 3, "mid_filters": 4, "mid_layers": 1},
  "train": {"iterations": 6, "log_every": 2, "checkpoint_every": 3},
  "eval": {"sweep_taus": [0.0, 0.3, 1.0]}
}"#;

fn lnms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnms")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lnms(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen, sweep, train, eval, report in `root`; returns the report directory.
fn pipeline(root: &Path, config: &Path) -> std::path::PathBuf {
    let (data, results) = (root.join("data"), root.join("results"));
    let cfg = p(config);
    ok(&["gen", "--config", cfg, "--out", p(&data)]);
    ok(&["sweep", "--config", cfg, "--data", p(&data.join("test.jsonl")), "--out", p(&results)]);
    let ckpt = ok(&[
        "train", "--config", cfg, "--variant", "IoU+S1_03", "--data", p(&data.join("train.jsonl")),
        "--out", p(&root.join("runs")),
    ]);
    ok(&["eval", "--config", cfg, "--data", p(&data.join("test.jsonl")), "--checkpoint", ckpt.trim(), "--out", p(&results)]);
    let report = root.join("report");
    ok(&["report", "--results", p(&results), "--out", p(&report)]);
    report
}

#[test]
fn full_pipeline_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let report = pipeline(dir.path(), &config);

    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "config.json", "manifest.json"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let runs = dir.path().join("runs");
    for f in ["tnet_iou_s1_03_seed0.ckpt", "tnet_iou_s1_03_seed0_it3.ckpt", "tnet_iou_s1_03_seed0.log.csv"] {
        assert!(runs.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(runs.join("tnet_iou_s1_03_seed0.log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "iteration,loss,grad_norm,wall_ms");
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("6,"));

    let table = fs::read_to_string(report.join("ar_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.contains("GreedyNMS tau=0.30"));
    assert!(table.contains("Tnet IoU+S1_03"));
    let curves = fs::read_to_string(report.join("pr_curves.csv")).unwrap();
    assert!(curves.starts_with("method,tau_or_checkpoint,score_threshold,tp,fp,fn,precision,recall"));
    assert!(!curves.contains(p(dir.path())), "report must not embed absolute paths");
}

#[test]
fn report_is_byte_identical_across_runs() {
    let config_dir = tempfile::tempdir().unwrap();
    let config = config_dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (pipeline(a.path(), &config), pipeline(b.path(), &config));
    for f in ["ar_table.csv", "ar_table.md", "pr_curves.csv"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = lnms(&["report", "--results", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no result files"));
}

#[test]
fn mixed_hashes_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--config", p(&config), "--out", p(&data)]);
    let test = data.join("test.jsonl");
    let results = dir.path().join("results");
    ok(&["eval", "--config", p(&config), "--data", p(&test), "--tau", "0.3", "--out", p(&results.join("a"))]);
    ok(&["eval", "--config", p(&config), "--seed", "9", "--data", p(&test), "--tau", "0.5", "--out", p(&results.join("b"))]);
    let out = lnms(&["report", "--results", p(&results)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(&["report", "--results", p(&results), "--force"]);
}

#[test]
fn bad_inputs_exit_with_2_and_name_the_culprit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"learnin_rate": 1}}"#).unwrap();
    let out = lnms(&["gen", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("learnin_rate"), "{err}");

    let out = lnms(&["gen", "--set", "synth.pair_prob=2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pair_prob"));

    let out = lnms(&["sweep", "--data", p(&dir.path().join("missing.jsonl")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let out = lnms(&["train", "--variant", "bogus", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fresh_scene_training_needs_no_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let ckpt = ok(&["train", "--config", p(&config), "--variant", "S1", "--fresh", "--train-seed", "3", "--out", p(dir.path())]);
    assert!(ckpt.trim().ends_with("tnet_s1_seed3.ckpt"));
    let out = lnms(&["train", "--config", p(&config), "--variant", "S1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}
