use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn auxts(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auxts"))
        .args(args)
        .env("AUXTS_OUTPUT_ROOT", root)
        .output()
        .expect("runs")
}

fn write_config(dir: &Path, max_loss: f64) -> String {
    let cfg = serde_json::json!({
        "dataset": {"kind": "sbm", "blocks": [20, 20], "p_in": 0.3, "p_out": 0.05, "feature_dim": 4, "noise": 1.0, "seed": 3},
        "train": {
            "strategy": "aux-ts-all-sims",
            "encoder": {"hidden_dims": [8]},
            "epochs": 2,
            "pretrain_epochs": 1,
            "batch_size": 8,
            "partition": "same-graph",
            "max_loss": max_loss,
            "weighting": {"hidden": 4, "type_dim": 2}
        },
        "seeds": [0, 1],
        "output_dir": "out"
    });
    let path = dir.join("exp.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1e6);
    let out = auxts(&["run", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([0, 1]));
    let run_dir = dir.path().join("out");
    for f in ["seed-0.csv", "seed-1.csv", "seed-0.json", "seed-1.json", "aggregate.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(run_dir.join("seed-0.csv")).unwrap();
    assert!(csv.starts_with("step,phase,task_id,loss,weight,sim,valid_metric\n"));

    let rep = auxts(&["report", run_dir.to_str().unwrap()], dir.path());
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("multi-candidate classification"));
    assert!(text.contains("micro-f1"));
}

#[test]
fn diverging_seeds_give_a_failing_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1e-9);
    let out = auxts(&["run", &cfg, "--sequential"], dir.path());
    assert!(!out.status.success());
    assert!(dir.path().join("out/aggregate.json").exists());
}

#[test]
fn rescale_and_pretrain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1e6);
    let out = auxts(&["rescale", &cfg, "--grid", "1,1", "--grid", "5,1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("edge=5 attr=1"));
    assert!(dir.path().join("out/rescale.json").exists());

    let bad = auxts(&["rescale", &cfg, "--edge-task", "nope"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope"));

    let out = auxts(&["pretrain", &cfg], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("out/pretrain-seed-1.ckpt").exists());
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"dataset": {"kind": "sbm"}, "seeds": []}"#).unwrap();
    let out = auxts(&["run", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let out = auxts(&["report", dir.path().to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let out = auxts(&["rescale", "x.json", "--grid", "1"], dir.path());
    assert!(!out.status.success());
}
