use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crowdflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdflow"))
        .args(args)
        .env("CROWDFLOW_THREADS", "1")
        .output()
        .expect("spawn crowdflow")
}

fn ok(args: &[&str]) {
    let out = crowdflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_scene(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("scene.json");
    std::fs::write(
        &cfg,
        r#"{"width": 64, "height": 48, "frames": 6, "n_min": 4, "n_max": 6}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn ground_truth_as_prediction_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, gt, out) = (
        tmp.path().join("data"),
        tmp.path().join("gt"),
        tmp.path().join("eval"),
    );
    let cfg = small_scene(tmp.path());
    ok(&[
        "generate",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--count",
        "2",
        "--out",
        s(&data),
    ]);
    assert!(data.join("seq_000/frames/000005.png").is_file());
    assert!(data.join("seq_001/annotations.csv").is_file());

    ok(&["gtmaps", "--data", s(&data), "--out", s(&gt)]);
    assert!(gt.join("seq_000/density/000000.cfmp").is_file());
    assert!(gt.join("seq_000/density_s1/000000.cfmp").is_file());
    ok(&["track", "--input", s(&gt), "--out", s(&gt)]);
    assert!(gt.join("seq_001/tracklets.csv").is_file());

    ok(&[
        "evaluate",
        "--pred",
        s(&gt),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    let r = json(&out.join("results.json"));
    assert!(r["mae"].as_f64().unwrap() < 1e-9);
    assert!(r["mse"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["l_map"].as_f64().unwrap(), 1.0);
    assert_eq!(r["t_map"].as_f64().unwrap(), 1.0);
    let pr = std::fs::read_to_string(out.join("pr_curves.csv")).unwrap();
    assert!(pr.starts_with("curve,rank,recall,precision"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["subcommand"], "evaluate");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn suite_results_carry_every_attribute_group() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, gt, out) = (
        tmp.path().join("suite"),
        tmp.path().join("gt"),
        tmp.path().join("eval"),
    );
    ok(&["generate", "--suite", "--seed", "2", "--out", s(&data)]);
    ok(&["gtmaps", "--data", s(&data), "--out", s(&gt)]);
    ok(&[
        "evaluate",
        "--pred",
        s(&gt),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    let r = json(&out.join("results.json"));
    for key in [
        "mae", "mse", "l_map", "l_ap10", "l_ap15", "l_ap20", "t_map", "t_ap10", "t_ap15", "t_ap20",
    ] {
        assert!(r[key].is_number(), "missing {key}");
    }
    for (group, values) in [
        ("illumination", &["cloudy", "sunny", "night"][..]),
        ("altitude", &["high", "low"][..]),
        ("density", &["crowded", "sparse"][..]),
    ] {
        for v in values {
            assert!(r[group][v]["mae"].is_number(), "{group}/{v}");
        }
    }
    let table = std::fs::read_to_string(out.join("attributes.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 7);
}

#[test]
fn train_without_association_has_no_embedding_head() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    let scene = small_scene(tmp.path());
    ok(&["generate", "--config", s(&scene), "--out", s(&data)]);
    let cfg = tmp.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{
            "model": {"channels": [4, 6, 8, 8], "group_depth": [1, 1, 1, 1], "fuse_channels": 4, "embedding_dim": 4},
            "schedule": {"phases": [{"epochs": 2, "lr": 0.001}]},
            "batch_size": 2, "samples_per_epoch": 2,
            "augment": {"crop": [32, 32]}
        }"#,
    )
    .unwrap();
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--no-ass",
        "--out",
        s(&run),
    ]);

    let model = crowdflow::stanet::Model::load(&run.join("checkpoint.cfck")).unwrap();
    assert!(!model.config.use_association_head);
    assert!(model.params.names().all(|n| !n.starts_with("assoc.")));
    assert!(model.params.names().any(|n| n.starts_with("head1.")));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert_eq!(json(&run.join("train_config.json"))["seed"], 4);

    let pred = tmp.path().join("pred");
    ok(&[
        "infer",
        "--checkpoint",
        s(&run.join("checkpoint.cfck")),
        "--data",
        s(&data),
        "--out",
        s(&pred),
    ]);
    let name = data.file_name().unwrap().to_str().unwrap();
    assert!(pred.join(name).join("localization/000005.cfmp").is_file());
    ok(&["track", "--input", s(&pred), "--out", s(&pred)]);
    ok(&[
        "evaluate",
        "--pred",
        s(&pred),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("eval")),
    ]);
}

#[test]
fn errors_are_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = crowdflow(&[
        "evaluate",
        "--pred",
        "/nonexistent",
        "--data",
        "/nonexistent",
        "--out",
        s(tmp.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1);
    let v: Value = serde_json::from_str(err.trim_end()).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("/nonexistent"));
}
