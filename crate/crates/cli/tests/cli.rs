use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointseg::cloud::LabelMap;
use pointseg::gnn::load_checkpoint;
use pointseg::io::{read_ply, write_labeled_ply};
use pointseg_cli::manifest::RunManifest;
use tempfile::{tempdir, TempDir};

fn pointseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pointseg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    pointseg(dir, args).status.code().unwrap()
}

/// A temporary directory holding `h.ply`, a small noisy humanoid with truth.
fn with_humanoid() -> (TempDir, PathBuf) {
    let dir = tempdir().unwrap();
    ok(dir.path(), &["synth", "humanoid6", "--n", "1500", "--noise", "0.01", "--seed", "3", "--out", "h.ply"]);
    let p = dir.path().join("h.ply");
    (dir, p)
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_a_labeled_ply_and_is_deterministic() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let line = ok(d, &["synth", "humanoid6", "--n", "6000", "--out", "a.ply"]);
    assert!(line.contains("6000 points, 6 parts"));
    let lc = read_ply(&d.join("a.ply")).unwrap();
    assert_eq!(lc.truth.unwrap().num_clusters(), 6);
    ok(d, &["synth", "humanoid6", "--n", "6000", "--out", "b.ply"]);
    assert_eq!(fs::read(d.join("a.ply")).unwrap(), fs::read(d.join("b.ply")).unwrap());
    let m = RunManifest::load(&d.join("a.manifest.json")).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(code(d, &["synth", "blob", "--out", "c.ply"]), 2);
    assert_eq!(code(d, &["synth", "humanoid6", "--n", "3", "--out", "c.ply"]), 2);
}

#[test]
fn segment_with_srg_writes_labels_report_and_manifest() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    let line = ok(d, &["segment", "h.ply", "--method", "srg", "--parts", "6", "--out", "run"]);
    assert!(line.starts_with("h: 1500 points, 6 parts"), "{line}");
    let labels = read_ply(&d.join("run/h.ply")).unwrap().truth.unwrap();
    assert_eq!(labels.num_clusters(), 6);
    let r = report(&d.join("run/h.report.json"));
    for key in ["miou", "oa", "per_part_iou", "matching", "latency_ms"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    let text = fs::read_to_string(d.join("run/h.report.txt")).unwrap();
    assert!(text.starts_with("miou: "));
    let m = RunManifest::load(&d.join("run/manifest.json")).unwrap();
    assert_eq!(m.command, "segment");
    assert_eq!(m.inputs, vec![fs::canonicalize(d.join("h.ply")).unwrap()]);
    assert_eq!(m.config.unwrap().target_parts, 6);
}

#[test]
fn exit_codes() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    assert_eq!(code(d, &["segment", "missing.ply"]), 3);
    assert_eq!(code(d, &["segment", "h.ply", "--parts", "1"]), 2);
    assert_eq!(code(d, &["segment", "h.ply", "--method", "nope"]), 2);
    assert_eq!(code(d, &["segment"]), 2);
    assert_eq!(code(d, &["segment", "h.ply", "--jobs", "0"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    // More parts than points: the pipeline refuses.
    ok(d, &["synth", "plane", "--n", "4", "--out", "tiny.ply"]);
    assert_eq!(code(d, &["segment", "tiny.ply", "--method", "srg", "--parts", "6"]), 4);
    fs::write(d.join("bad.ply"), "ply\nformat ascii 1.0\nelement vertex 3\nend_header\n").unwrap();
    assert_eq!(code(d, &["segment", "bad.ply"]), 3);
    assert_eq!(code(d, &["--help"]), 0);
}

#[test]
fn config_file_then_flags() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    fs::write(d.join("c.json"), r#"{"target_parts": 4, "normal_threshold_deg": 30, "rng_seed": 9}"#).unwrap();
    ok(d, &["segment", "h.ply", "--method", "srg", "--config", "c.json", "--parts", "5", "--out", "run"]);
    let c = RunManifest::load(&d.join("run/manifest.json")).unwrap().config.unwrap();
    assert_eq!(c.target_parts, 5);
    assert_eq!(c.srg.normal_threshold_deg, 30.0);
    assert_eq!(c.rng_seed, 9);
    assert_eq!(read_ply(&d.join("run/h.ply")).unwrap().truth.unwrap().num_clusters(), 5);

    fs::write(d.join("bad.json"), r#"{"target_part": 4}"#).unwrap();
    assert_eq!(code(d, &["segment", "h.ply", "--config", "bad.json"]), 2);
    assert_eq!(code(d, &["segment", "h.ply", "--config", "absent.json"]), 3);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    ok(d, &["segment", "h.ply", "--method", "srgnet", "--iters", "60", "--seed", "4", "--out", "first"]);
    ok(d, &["segment", "--manifest", "first/manifest.json", "--out", "second"]);
    assert_eq!(fs::read(d.join("first/h.ply")).unwrap(), fs::read(d.join("second/h.ply")).unwrap());
    assert_eq!(fs::read(d.join("first/h.ckpt")).unwrap(), fs::read(d.join("second/h.ckpt")).unwrap());

    let log = fs::read_to_string(d.join("first/h.train.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iteration,loss,distinct_labels"));
    assert_eq!(log.lines().count(), 61);
    let model = load_checkpoint(&d.join("first/h.ckpt")).unwrap();
    assert_eq!(model.config().num_classes, 6);
}

#[test]
fn jobs_do_not_change_results() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    ok(d, &["synth", "dihedral", "--n", "800", "--seed", "1", "--out", "w.ply"]);
    ok(d, &["segment", "h.ply", "w.ply", "--method", "srg", "--parts", "2", "--out", "one"]);
    let out = ok(d, &["segment", "h.ply", "w.ply", "--method", "srg", "--parts", "2", "--jobs", "2", "--out", "two"]);
    assert_eq!(out.lines().count(), 2);
    for f in ["h.ply", "w.ply"] {
        assert_eq!(fs::read(d.join("one").join(f)).unwrap(), fs::read(d.join("two").join(f)).unwrap());
    }
    let stderr = pointseg(d, &["segment", "h.ply", "missing.ply", "--method", "srg", "--out", "three"]);
    assert_eq!(stderr.status.code(), Some(3));
    assert!(d.join("three/h.ply").exists(), "other inputs still complete");
}

#[test]
fn baseline_runs_kmeans() {
    let (dir, _) = with_humanoid();
    let d = dir.path();
    ok(d, &["baseline", "h.ply", "--out", "km"]);
    let m = RunManifest::load(&d.join("km/manifest.json")).unwrap();
    assert_eq!(m.command, "baseline");
    assert_eq!(serde_json::to_value(m.method).unwrap(), "kmeans");
    assert!(report(&d.join("km/h.report.json"))["miou"].as_f64().unwrap() > 0.0);
    assert_eq!(code(d, &["baseline", "h.ply", "--features", "xyz-normal", "--normal-weight", "-1"]), 2);
}

#[test]
fn eval_matches_partitions() {
    let (dir, path) = with_humanoid();
    let d = dir.path();
    let text = ok(d, &["eval", "h.ply", "h.ply"]);
    assert!(text.starts_with("miou: 1.000000\n"), "{text}");

    // Same partition, different label values.
    let lc = read_ply(&path).unwrap();
    let truth = lc.truth.unwrap();
    let flipped = LabelMap::new(truth.labels().iter().map(|&l| 5 - l).collect()).unwrap();
    write_labeled_ply(&d.join("flipped.ply"), &lc.cloud, &flipped).unwrap();
    let json: serde_json::Value = serde_json::from_str(&ok(d, &["eval", "flipped.ply", "h.ply", "--json"])).unwrap();
    assert_eq!(json["miou"], 1.0);
    assert_eq!(json["matching"]["0"], 5);

    ok(d, &["synth", "plane", "--n", "10", "--out", "p.ply"]);
    assert_eq!(code(d, &["eval", "p.ply", "h.ply"]), 2);
    assert_eq!(code(d, &["eval", "absent.ply", "h.ply"]), 3);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "dihedral", "--n", "1200", "--seed", "2", "--out", "w.ply"]);
    let csv = ok(d, &["sweep", "w.ply", "--param", "normal-deg", "--values", "5,15,45", "--parts", "2", "--out", "sw"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "value,miou,oa,latency_ms,num_regions");
    assert_eq!(rows.len(), 4);
    let regions: Vec<usize> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(regions.windows(2).all(|w| w[1] <= w[0]), "{regions:?}");
    assert_eq!(fs::read_to_string(d.join("sw/sweep.csv")).unwrap(), csv);
    let m = RunManifest::load(&d.join("sw/manifest.json")).unwrap();
    assert_eq!(m.sweep.unwrap().values, vec![5.0, 15.0, 45.0]);

    assert_eq!(code(d, &["sweep", "w.ply", "--param", "normal-deg", "--values", ""]), 2);
    assert_eq!(code(d, &["sweep", "w.ply", "--param", "knn", "--values", "2.5"]), 2);
    fs::write(d.join("plain.xyz"), "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    assert_eq!(code(d, &["sweep", "plain.xyz", "--param", "knn", "--values", "5"]), 2);
}
