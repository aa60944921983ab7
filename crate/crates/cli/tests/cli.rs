use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peakfocus"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("readable")).expect("json")
}

/// One smoke training run shared by the tests that need a run directory.
fn trained(dir: &Path) -> PathBuf {
    let run_dir = dir.join("run");
    ok(&["train", "--config", p(&smoke_config()), "--out", p(&run_dir)]);
    run_dir
}

#[test]
fn synth_is_deterministic_and_rejects_zero_length() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a.csv"), d.path().join("b.csv"));
    ok(&["synth", "--n", "500", "--seed", "3", "--out", p(&a)]);
    ok(&["synth", "--n", "500", "--seed", "3", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 501);

    let o = run(&["synth", "--n", "0", "--out", p(&d.path().join("c.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--n"));
}

#[test]
fn detect_peaks_on_flat_input_and_missing_file() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("flat.csv");
    let mut s = String::from("timestamp,value\n");
    for h in 0..24 {
        s.push_str(&format!("2020-01-01T{h:02}:00:00,5.0\n"));
    }
    fs::write(&input, s).unwrap();
    let out = d.path().join("labelled.csv");
    let o = ok(&["detect-peaks", p(&input), "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("0 peaks in 24 rows"));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));

    let o = run(&["detect-peaks", p(&d.path().join("missing.csv"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
}

#[test]
fn make_masks_writes_one_row_per_step() {
    let d = tempfile::tempdir().unwrap();
    let series = d.path().join("s.csv");
    ok(&["synth", "--n", "200", "--out", p(&series)]);
    let out = d.path().join("m.csv");
    ok(&["make-masks", p(&series), "--horizon", "24", "--history", "48", "--hard", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    // (200 - 48) / 24 = 6 full windows.
    assert_eq!(text.lines().count(), 1 + 6 * 24);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0") || l.ends_with(",1")));
}

#[test]
fn train_evaluate_export_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let run_dir = trained(d.path());
    for f in ["log.jsonl", "best.ckpt", "test_metrics.json", "config.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }

    // Re-evaluation reproduces the stored test metrics exactly.
    let eval_out = d.path().join("eval.json");
    let preds = d.path().join("preds.csv");
    ok(&["evaluate", "--run", p(&run_dir), "--out", p(&eval_out), "--predictions", p(&preds)]);
    assert_eq!(json(&eval_out), json(&run_dir.join("test_metrics.json")));

    // A stricter threshold cannot raise recall.
    let strict = d.path().join("strict.json");
    let loose = d.path().join("loose.json");
    ok(&["evaluate", "--run", p(&run_dir), "--tau", "0.9", "--out", p(&strict)]);
    ok(&["evaluate", "--run", p(&run_dir), "--tau", "0.4", "--out", p(&loose)]);
    let recall = |v: &Value| v["recall"].as_f64().unwrap();
    assert!(recall(&json(&strict)) <= recall(&json(&loose)));

    let pred_text = fs::read_to_string(&preds).unwrap();
    assert!(pred_text.starts_with("window_id,index,intensity,peak_prob\n"));

    let (a, b) = (d.path().join("x1"), d.path().join("x2"));
    ok(&["export-attn", "--run", p(&run_dir), "--sample", "0", "--out", p(&a)]);
    ok(&["export-attn", "--run", p(&run_dir), "--sample", "0", "--out", p(&b)]);
    let meta = json(&a.join("meta.json"));
    let horizon = meta["horizon"].as_u64().unwrap() as usize;
    for h in 0..meta["heads"].as_u64().unwrap() {
        let name = format!("attention_head{h}.csv");
        let text = fs::read_to_string(a.join(&name)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), horizon);
        for r in rows {
            let s: f64 = r.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-9, "{name} row sums to {s}");
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    let probs = fs::read_to_string(a.join("peak_prob.csv")).unwrap();
    assert_eq!(probs.lines().count(), 1 + horizon);
    assert_eq!(fs::read(a.join("forecast.csv")).unwrap(), fs::read(b.join("forecast.csv")).unwrap());

    let o = run(&["export-attn", "--run", p(&run_dir), "--sample", "100000", "--out", p(&a)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("out of range"));
}

#[test]
fn ablation_flag_is_recorded_and_bad_keys_are_named() {
    let d = tempfile::tempdir().unwrap();
    let run_dir = d.path().join("abl");
    ok(&["train", "--config", p(&smoke_config()), "--out", p(&run_dir), "--ablation", "no_upap", "--epochs", "1"]);
    let cfg = json(&run_dir.join("config.json"));
    assert_eq!(cfg["train"]["ablation"]["no_upap"], Value::Bool(true));
    assert_eq!(cfg["train"]["epochs"], Value::from(1));

    let o = run(&["train", "--config", p(&smoke_config()), "--out", p(&run_dir), "--ablation", "no_such"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no_such"));

    let mut bad = json(&smoke_config());
    bad["train"]["learning_rate"] = Value::from(0.1);
    let bad_path = d.path().join("bad.json");
    fs::write(&bad_path, bad.to_string()).unwrap();
    let o = run(&["train", "--config", p(&bad_path), "--out", p(&d.path().join("bad"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn checkpoint_from_another_shape_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let run_dir = trained(d.path());
    let mut cfg = json(&run_dir.join("config.json"));
    cfg["model"]["d_model"] = Value::from(8);
    cfg["model"]["d_ff"] = Value::from(8);
    fs::write(run_dir.join("config.json"), cfg.to_string()).unwrap();
    let o = run(&["evaluate", "--run", p(&run_dir)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn score_ideal_and_zero_forecasts() {
    let d = tempfile::tempdir().unwrap();
    let truth = d.path().join("truth.csv");
    fs::write(
        &truth,
        "timestamp,value,peak\n0,1.0,0\n1,4.0,1\n2,2.0,0\n3,1.0,0\n4,3.0,1\n5,1.0,0\n",
    )
    .unwrap();
    let ideal = d.path().join("ideal.csv");
    let mut s = String::from("window_id,index,intensity,peak_prob\n");
    for (i, (v, pk)) in [(1.0, 0), (4.0, 1), (2.0, 0), (1.0, 0), (3.0, 1), (1.0, 0)].iter().enumerate() {
        s.push_str(&format!("0,{i},{v},{pk}\n"));
    }
    fs::write(&ideal, s).unwrap();
    let out = ok(&["score", "--predictions", p(&ideal), "--truth", p(&truth)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["f1"], Value::from(1.0));
    assert_eq!(v["bcs"], Value::from(0.0));

    let zero = d.path().join("zero.csv");
    let mut s = String::from("window_id,index,intensity,peak_prob\n");
    for i in 0..6 {
        s.push_str(&format!("0,{i},1.0,0.0\n"));
    }
    fs::write(&zero, s).unwrap();
    let out = ok(&["score", "--predictions", p(&zero), "--truth", p(&truth)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["f1"], Value::from(0.0));
    assert_eq!(v["pim"], Value::Null);
}
