use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn navcurate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navcurate"))
        .args(args)
        .current_dir(dir)
        .env_remove("NAVCURATE_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = navcurate(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Exit code and the single structured stderr record.
fn fails(dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = navcurate(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().expect("an error record");
    let record: Value = serde_json::from_str(last).unwrap();
    let code = out.status.code().unwrap();
    assert_eq!(record["exit_code"], code);
    (code, record)
}

fn oracle_pipeline(dir: &Path) {
    ok(dir, &["synth", "--out", "syn"]);
    ok(dir, &["segment", "--input", "syn/poses", "--fps", "30", "--out", "clips"]);
    ok(dir, &["filter", "--clips", "clips", "--detections", "syn/detections", "--report", "out/report.json"]);
}

#[test]
fn oracle_corpus_through_the_cli() {
    let t = tempfile::tempdir().unwrap();
    oracle_pipeline(t.path());
    let report = json(t.path().join("out/report.json"));
    assert_eq!(report["counts"]["clips_in"], 10);
    assert_eq!(report["counts"]["accepted"], 6);
    assert_eq!(report["counts"]["rejected_by_reason"]["view_divergence"], 2);
    let accepted = fs::read_to_string(t.path().join("out/accepted.txt")).unwrap();
    assert_eq!(accepted.lines().count(), 6);
    let manifest = json(t.path().join("out/report.manifest.json"));
    let c = &manifest["counts"];
    assert_eq!(c["clips_in"].as_u64(), Some(c["accepted"].as_u64().unwrap() + c["rejected"].as_u64().unwrap()));
    assert_eq!(manifest["config"]["filter"]["divergence_max_deg"], 60.0);
    assert_eq!(manifest["config"]["convention"]["world_up"], "-y");
    // 10 clip files + 10 detection files.
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 20);

    let s = ok(
        t.path(),
        &[
            "samples",
            "--clips",
            "clips",
            "--landmarks",
            "syn/landmarks.jsonl",
            "--accepted",
            "out/accepted.txt",
            "--out",
            "out/samples.jsonl",
        ],
    );
    assert_eq!(s["counts"]["samples"], 18);
    assert_eq!(s["counts"]["landmarks_on_rejected_clips"], 12);
}

#[test]
fn flags_override_the_config_file() {
    let t = tempfile::tempdir().unwrap();
    oracle_pipeline(t.path());
    fs::write(t.path().join("loose.json"), r#"{"filter": {"divergence_max_deg": 100.0, "pitch_range_max_deg": 30.0}}"#)
        .unwrap();
    let base = ["filter", "--clips", "clips", "--detections", "syn/detections", "--config", "loose.json", "--report"];

    let loose = ok(t.path(), &[&base[..], &["a.json"]].concat());
    assert_eq!(loose["counts"]["accepted"], 9);
    let tight =
        ok(t.path(), &[&base[..], &["b.json", "--divergence-max-deg", "60", "--crowd-count-threshold", "6"]].concat());
    assert_eq!(tight["counts"]["rejected_by_reason"]["view_divergence"], 2);
    assert_eq!(tight["counts"]["rejected_by_reason"]["pitch_range"], 0);
    assert_eq!(tight["counts"]["rejected_by_reason"]["crowd_density"], 0);
    let m = json(t.path().join("b.manifest.json"));
    assert_eq!(m["config"]["filter"]["crowd_count_threshold"], 6);
    assert_eq!(m["config"]["filter"]["pitch_range_max_deg"], 30.0);
    assert!(m["inputs"].get("loose.json").is_some());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("bad.txt"), "0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n").unwrap();
    let (code, rec) = fails(d, &["segment", "--input", "bad.txt", "--fps", "30", "--out", "o"]);
    assert_eq!((code, rec["kind"].as_str()), (2, Some("parse")));
    assert!(rec["message"].as_str().unwrap().contains(":2:"));

    fs::write(d.join("short.txt"), "0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n").unwrap();
    let (code, _) = fails(d, &["segment", "--input", "short.txt", "--fps", "30", "--out", "o"]);
    assert_eq!(code, 3);

    let (code, rec) = fails(d, &["eval", "--pred", "missing.jsonl", "--out", "r.json"]);
    assert_eq!((code, rec["kind"].as_str()), (4, Some("io")));

    let (code, rec) = fails(d, &["filter", "--clips", "o"]);
    assert_eq!((code, rec["kind"].as_str()), (2, Some("usage")));

    fs::write(d.join("cfg.json"), r#"{"filter": {"pitch_range_max": 15}}"#).unwrap();
    fs::create_dir(d.join("empty")).unwrap();
    let (code, _) = fails(d, &["filter", "--clips", "empty", "--config", "cfg.json", "--report", "r.json"]);
    assert_eq!(code, 2);
    let (code, _) = fails(d, &["filter", "--clips", "empty", "--report", "r.json"]);
    assert_eq!(code, 3);
    let (code, _) = fails(d, &["filter", "--clips", "empty", "--report", "r.json", "--window-seconds", "-1"]);
    assert_eq!(code, 2);
}

#[test]
fn eval_on_perfect_and_reversed_predictions() {
    let t = tempfile::tempdir().unwrap();
    let line = |id: &str, sign: f64| {
        let gt: Vec<Value> = (1..=8).map(|i| serde_json::json!({"x": i as f64 * 0.5, "y": 0.1 * i as f64})).collect();
        let pred: Vec<Value> =
            (1..=8).map(|i| serde_json::json!({"x": sign * i as f64 * 0.5, "y": sign * 0.1 * i as f64})).collect();
        serde_json::json!({"sample_id": id, "predicted": pred, "ground_truth": gt, "predicted_arrival": 0.9, "arrival_label": true}).to_string()
    };
    fs::write(t.path().join("p.jsonl"), format!("{}\n{}\n", line("a", 1.0), line("b", 1.0))).unwrap();
    ok(t.path(), &["eval", "--pred", "p.jsonl", "--out", "m.json"]);
    let m = json(t.path().join("m.json"));
    for k in ["aoe_deg", "maoe_deg", "ade_m", "made_m"] {
        assert_eq!(m[k], 0.0, "{k}");
    }
    assert_eq!(m["arrival_accuracy"], 1.0);

    fs::write(t.path().join("q.jsonl"), format!("{}\n", line("c", -1.0))).unwrap();
    ok(t.path(), &["eval", "--pred", "q.jsonl", "--out", "n.json"]);
    let n = json(t.path().join("n.json"));
    assert!((n["aoe_deg"].as_f64().unwrap() - 180.0).abs() < 1e-9);
}

#[test]
fn loss_command_prints_components_and_total() {
    let t = tempfile::tempdir().unwrap();
    fs::write(
        t.path().join("l.json"),
        r#"{"pred": [{"x": 1, "y": 0}, {"x": 2, "y": 0}], "gt": [{"x": 1, "y": 0}, {"x": 2, "y": 0}],
            "logit": 0.0, "label": true,
            "pred_features": [[0.5, -0.5]], "gt_features": [[0.0, 0.0]]}"#,
    )
    .unwrap();
    let out = ok(t.path(), &["loss", "--input", "l.json"]);
    assert_eq!(out["components"]["reg"], 0.0);
    assert_eq!(out["components"]["ori"], -1.0);
    assert!((out["components"]["arr"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
    assert_eq!(out["components"]["hall"], 1.0);
    let total = out["total"].as_f64().unwrap();
    assert!((total - 2f64.ln()).abs() < 1e-12);
    let weighted = ok(t.path(), &["loss", "--input", "l.json", "--lambda-ori", "2", "--lambda-hall", "0"]);
    assert!((weighted["total"].as_f64().unwrap() - (2f64.ln() - 2.0)).abs() < 1e-12);

    fs::write(t.path().join("m.json"), r#"{"logit": 1.0}"#).unwrap();
    assert_eq!(fails(t.path(), &["loss", "--input", "m.json"]).0, 2);
}

#[test]
fn replay_reproduces_each_stage_and_detects_changed_inputs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    oracle_pipeline(d);
    ok(
        d,
        &[
            "samples",
            "--clips",
            "clips",
            "--landmarks",
            "syn/landmarks.jsonl",
            "--accepted",
            "out/accepted.txt",
            "--out",
            "out/s.jsonl",
            "--seed",
            "5",
            "--draws-per-landmark",
            "3",
        ],
    );
    for m in ["syn/manifest.json", "clips/manifest.json", "out/report.manifest.json", "out/s.manifest.json"] {
        let before = fs::read(d.join(m)).unwrap();
        let r = ok(d, &["replay", "--manifest", m]);
        assert_eq!(r["replayed"], true);
        assert_eq!(fs::read(d.join(m)).unwrap(), before, "{m}");
    }
    // The sampler seed and draw count come from the manifest, not defaults.
    let samples = fs::read_to_string(d.join("out/s.jsonl")).unwrap();
    assert_eq!(samples.lines().count(), 54);

    let path = d.join("out/accepted.txt");
    let mut list = fs::read_to_string(&path).unwrap();
    list.push_str("turn_75_0000\n");
    fs::write(&path, list).unwrap();
    let (code, rec) = fails(d, &["replay", "--manifest", "out/s.manifest.json"]);
    assert_eq!((code, rec["kind"].as_str()), (2, Some("stale_input")));
}

#[test]
fn workers_flag_and_env_do_not_change_outputs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["synth", "--out", "syn"]);
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let clips = format!("c{i}");
        ok(d, &["--workers", workers, "segment", "--input", "syn/poses", "--fps", "30", "--out", &clips]);
        let out = Command::new(env!("CARGO_BIN_EXE_navcurate"))
            .args([
                "filter",
                "--clips",
                &clips,
                "--detections",
                "syn/detections",
                "--report",
                &format!("r{i}/report.json"),
            ])
            .env("NAVCURATE_WORKERS", workers)
            .current_dir(d)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(d.join(format!("r{i}/report.json"))).unwrap());
        outputs.push(fs::read(d.join(format!("{clips}/arc_0000.txt"))).unwrap());
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
}
