//! End-to-end tests of the command-line surface: dataset generation,
//! validation, training, evaluation, sweeps, graph export, exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jlgcn"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("jlgcn_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_citation(dir: &Path) {
    // 6 nodes, 2 classes, separable features, a 2-community graph.
    std::fs::write(
        dir.join("features.tsv"),
        "0\t1.0\t0.1\t0.0\n1\t0.9\t0.2\t0.0\n2\t1.1\t0.0\t0.1\n\
         3\t0.0\t1.0\t0.2\n4\t0.1\t0.9\t0.1\n5\t0.0\t1.1\t0.0\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("labels.tsv"),
        "0\t0\n1\t0\n2\t0\n3\t1\n4\t1\n5\t1\n",
    )
    .unwrap();
    std::fs::write(dir.join("edges.tsv"), "0\t1\n1\t2\n0\t2\n3\t4\n4\t5\n3\t5\n").unwrap();
    std::fs::write(
        dir.join("masks.tsv"),
        "0\ttrain\n3\ttrain\n1\tval\n4\tval\n2\ttest\n5\ttest\n",
    )
    .unwrap();
}

#[test]
fn convert_validates_citation_directory() {
    let dir = tmp("convert");
    write_tiny_citation(&dir);
    let out = bin()
        .args(["convert", "--dataset"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("6 nodes"), "{text}");
    assert!(text.contains("splits 2/2/2"), "{text}");
}

#[test]
fn convert_missing_directory_is_data_error() {
    let out = bin()
        .args(["convert", "--dataset", "/nonexistent/nowhere"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_export_roundtrip_on_tiny_node_task() {
    let dir = tmp("train_node");
    write_tiny_citation(&dir);
    let report = dir.join("report.json");
    let ckpt = dir.join("model.ckpt");

    let out = bin()
        .args(["train", "--task", "node", "--dataset"])
        .arg(&dir)
        .args([
            "--hidden", "4",
            "--metric-rank", "2",
            "--epochs", "40",
            "--seeds", "0,1",
            "--dropout-p", "0.0",
            "--report",
        ])
        .arg(&report)
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report.exists() && ckpt.exists());

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["per_seed"].as_array().unwrap().len(), 2);
    assert!(parsed["aggregate"]["mean_selected_test_acc"].is_number());

    // eval prints a JSON accuracy line
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
    assert!(eval["test_acc"].is_number());

    // export-graph: layer 0's learned adjacency and the ground truth
    for (layer, name) in [("0", "learned"), ("-1", "truth")] {
        let csv = dir.join(format!("{name}.csv"));
        let pgm = dir.join(format!("{name}.pgm"));
        let out = bin()
            .args(["export-graph", "--checkpoint"])
            .arg(&ckpt)
            .arg("--dataset")
            .arg(&dir)
            .args(["--layer-index", layer, "--node-range", "0:6", "--csv"])
            .arg(&csv)
            .arg("--pgm")
            .arg(&pgm)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "layer {layer}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(csv.exists() && pgm.exists());
        let pgm_bytes = std::fs::read(&pgm).unwrap();
        assert!(pgm_bytes.starts_with(b"P5\n6 6\n255\n"));
        let csv_text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(csv_text.lines().count(), 6);
    }

    // ground-truth export is the symmetric 0/1 adjacency
    let truth = std::fs::read_to_string(dir.join("truth.csv")).unwrap();
    let rows: Vec<Vec<f64>> = truth
        .lines()
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(rows[i][j], rows[j][i]);
            assert!(rows[i][j] == 0.0 || rows[i][j] == 1.0);
        }
    }
    assert_eq!(rows[0][1], 1.0);
    assert_eq!(rows[0][3], 0.0);
}

#[test]
fn ablate_writes_stable_csv() {
    let dir = tmp("ablate");
    write_tiny_citation(&dir);
    let out_csv = dir.join("sweep.csv");
    let out = bin()
        .args(["ablate", "--task", "node", "--dataset"])
        .arg(&dir)
        .args([
            "--hidden", "4",
            "--metric-rank", "2",
            "--epochs", "5",
            "--seeds", "0,1",
            "--dropout-p", "0.0",
            "--lambda-grid", "0,0.0001",
            "--edge-missing-grid", "0,0.5",
            "--out",
        ])
        .arg(&out_csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,edge_missing,label_missing,point_missing,seed,train_acc,val_acc,test_acc,selected_test_acc,wall_time_s"
    );
    // 4 cells x (2 seeds + mean + std)
    assert_eq!(lines.count(), 16);
    assert_eq!(text.matches(",mean,").count(), 4);
    assert_eq!(text.matches(",std,").count(), 4);
}

#[test]
fn make_synth_pointset_and_graph_training() {
    let dir = tmp("pointset");
    let data_dir = dir.join("data");
    let out = bin()
        .args(["make-synth", "--kind", "pointset"])
        .args([
            "--families", "sphere-shell,two-cluster",
            "--per-class", "8",
            "--points", "16",
            "--noise", "0.01",
            "--train-fraction", "0.75",
            "--seed", "5",
            "--out",
        ])
        .arg(&data_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["convert", "--pointsets"])
        .arg(&data_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("16 instances"), "{text}");
    assert!(text.contains("12 train / 4 test"), "{text}");

    let report = dir.join("report.json");
    let ckpt = dir.join("model.ckpt");
    let out = bin()
        .args(["train", "--task", "graph", "--dataset"])
        .arg(&data_dir)
        .args([
            "--hidden", "4,8",
            "--head-hidden", "8",
            "--metric-rank", "3",
            "--epochs", "15",
            "--batch-size", "4",
            "--seeds", "0",
            "--lambda", "0.001",
            "--report",
        ])
        .arg(&report)
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&data_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
    assert_eq!(eval["test_instances"], 4);
}

#[test]
fn bad_flag_value_is_config_error() {
    let dir = tmp("bad_cfg");
    write_tiny_citation(&dir);
    let out = bin()
        .args(["train", "--task", "node", "--dataset"])
        .arg(&dir)
        .args(["--dropout-p", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn checkpoint_dataset_mismatch_is_rejected() {
    let dir = tmp("mismatch");
    write_tiny_citation(&dir);
    let ckpt = dir.join("model.ckpt");
    let out = bin()
        .args(["train", "--task", "node", "--dataset"])
        .arg(&dir)
        .args([
            "--hidden", "4",
            "--metric-rank", "2",
            "--epochs", "1",
            "--seeds", "0",
            "--report",
        ])
        .arg(dir.join("r.json"))
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success());

    // A dataset with a different feature dimension must be rejected.
    let other = tmp("mismatch_other");
    std::fs::write(other.join("features.tsv"), "0\t1.0\t0.0\n1\t0.0\t1.0\n").unwrap();
    std::fs::write(other.join("labels.tsv"), "0\t0\n1\t1\n").unwrap();
    std::fs::write(other.join("edges.tsv"), "0\t1\n").unwrap();
    std::fs::write(other.join("masks.tsv"), "0\ttrain\n1\ttest\n").unwrap();
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&other)
        .output()
        .unwrap();
    assert!(!out.status.success());
}
