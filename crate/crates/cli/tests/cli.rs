use std::path::Path;
use std::process::{Command, Output};

use ovreg_core::harness::{generate_test_pair, Disturbance, ExperimentConfig, Shape, TransformChoice};
use ovreg_core::pointset::PointSet;
use serde_json::Value;

fn ovreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovreg")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes model and scene files for a small generated pair.
fn write_pair(dir: &Path, transform: TransformChoice, points: usize, outliers: f64) -> (std::path::PathBuf, std::path::PathBuf, PointSet, PointSet) {
    let shape = if transform == TransformChoice::Rigid3d { Shape::Rabbit } else { Shape::Fish };
    let cfg = ExperimentConfig { transform, shape, model_points: Some(points), seed: 5, ..ExperimentConfig::default() };
    let pair = generate_test_pair(&cfg, Disturbance { outlier_ratio: outliers, occlusion: 0.0 }, 0).unwrap();
    let (m, sc) = (dir.join("model.txt"), dir.join("scene.txt"));
    pair.model.write(&m).unwrap();
    pair.scene.write(&sc).unwrap();
    (m, sc, pair.model, pair.scene)
}

#[test]
fn align_similarity_writes_result_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (m, sc, _, _) = write_pair(dir.path(), TransformChoice::Similarity2d, 10, 0.2);
    let out = dir.path().join("res.json");
    let o = ovreg(&[
        "align", "--model", s(&m), "--scene", s(&sc), "--transform", "similarity2d", "--np", "10", "--eps0", "0.5", "--polish",
        "incumbent", "--max-nodes", "20000", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    assert_eq!(v["transform_kind"], "similarity2d");
    assert_eq!(v["matches"].as_array().unwrap().len(), 10);
    assert!(v["residual_rms"].as_f64().unwrap() < 1e-6, "{v}");
    assert!(v["energy"].as_f64().unwrap() >= v["lower_bound"].as_f64().unwrap() - 1e-9);
    let trace = std::fs::read_to_string(dir.path().join("res.trace.csv")).unwrap();
    assert!(trace.starts_with("iter,best_upper,best_lower,n_active,w0,w1,w2,w3"));
}

#[test]
fn align_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (m, sc, _, _) = write_pair(dir.path(), TransformChoice::Affine2d, 6, 0.0);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ovreg(&["align", "--model", s(&m), "--scene", s(&sc), "--transform", "affine2d", "--np", "auto", "--eps0", "4", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut v = read_json(&out);
        v.as_object_mut().unwrap().remove("wall_time_s");
        v.as_object_mut().unwrap().remove("trace");
        let trace = std::fs::read_to_string(dir.path().join(name.replace(".json", ".trace.csv"))).unwrap();
        (v, trace)
    };
    let (a, b) = (run("a.json"), run("b.json"));
    assert_eq!(a, b);
    // default n_p is ⌊0.9 · 6⌋
    assert_eq!(a.0["n_p"], 5);
}

#[test]
fn align_rigid() {
    let dir = tempfile::tempdir().unwrap();
    let (m, sc, _, _) = write_pair(dir.path(), TransformChoice::Rigid3d, 12, 0.25);
    let out = dir.path().join("rigid.json");
    let o = ovreg(&[
        "align", "--model", s(&m), "--scene", s(&sc), "--transform", "rigid3d", "--np", "12", "--eps0", "1", "--grid", "20",
        "--polish", "every", "--max-nodes", "60", "--threads", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    assert!(v["residual_rms"].as_f64().unwrap() < 1e-6, "{v}");
    let r = &v["transform"]["r"];
    assert_eq!(r.as_array().unwrap().len(), 3);
}

#[test]
fn oracle_agrees_with_align_within_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let (m, sc, _, _) = write_pair(dir.path(), TransformChoice::Similarity2d, 4, 0.0);
    let (ao, oo) = (dir.path().join("a.json"), dir.path().join("o.json"));
    let a = ovreg(&["align", "--model", s(&m), "--scene", s(&sc), "--transform", "similarity2d", "--np", "3", "--eps0", "1", "--out", s(&ao)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let o = ovreg(&["oracle", "--model", s(&m), "--scene", s(&sc), "--transform", "similarity2d", "--np", "3", "--out", s(&oo)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, o) = (read_json(&ao), read_json(&oo));
    assert_eq!(o["matchings"], 96);
    let eps = a["epsilon"].as_f64().unwrap();
    assert_eq!(eps, 4.0);
    assert!(a["energy"].as_f64().unwrap() <= o["energy"].as_f64().unwrap() + eps);
    assert!(o["eliminated_energy"].as_f64().unwrap() <= o["energy"].as_f64().unwrap() + 1e-9);

    let big = write_pair(dir.path(), TransformChoice::Similarity2d, 40, 0.0);
    let o = ovreg(&["oracle", "--model", s(&big.0), "--scene", s(&big.1), "--transform", "similarity2d", "--np", "20"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("too large"));
}

#[test]
fn experiment_writes_one_row_per_trial_and_sweep_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "shape = leaf\nmodel_points = 8\noutlier_ratios = 0, 0.25\nnp_ratios = 0.5, 1\ntrials = 2\neps0 = 8\n").unwrap();
    let out = dir.path().join("out");
    let o = ovreg(&["experiment", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
    assert!(results.starts_with("trial,outlier_ratio,occlusion,np_ratio,"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
}

#[test]
fn errors_exit_nonzero_with_message() {
    // usage errors come from the argument parser
    let o = ovreg(&["align", "--model", "m.txt", "--scene", "s.txt", "--transform", "affine2d", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--np"));
    let o = ovreg(&["align", "--model", "m.txt"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ovreg(&["align", "--model", "m.txt", "--scene", "s.txt", "--transform", "projective", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = ovreg(&["align", "--model", s(&missing), "--scene", s(&missing), "--transform", "affine2d", "--np", "3", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));

    let (m, sc, _, _) = write_pair(dir.path(), TransformChoice::Similarity2d, 5, 0.0);
    let o = ovreg(&["align", "--model", s(&m), "--scene", s(&sc), "--transform", "rigid3d", "--np", "3", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ovreg(&["align", "--model", s(&m), "--scene", s(&sc), "--transform", "affine2d", "--np", "9", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "trials = many\n").unwrap();
    let o = ovreg(&["experiment", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));
}

#[test]
fn identical_copies_round_trip_and_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _, model, _) = write_pair(dir.path(), TransformChoice::Similarity2d, 9, 0.0);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = ovreg(&["--threads", threads, "align", "--model", s(&m), "--scene", s(&m), "--transform", "similarity2d", "--np", "9", "--eps0", "4", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read_json(&out)
    };
    let v = run("one.json", "1");
    let rms = v["residual_rms"].as_f64().unwrap();
    assert!(rms <= 1e-6);

    // the recorded residual is reproduced from the recorded transform and matches
    let a = &v["transform"]["a"];
    let b = &v["transform"]["b"];
    let f = |x: &Value| x.as_f64().unwrap();
    let mut sq = 0.0;
    let matches = v["matches"].as_array().unwrap();
    for mt in matches {
        let (i, j) = (mt[0].as_u64().unwrap() as usize, mt[1].as_u64().unwrap() as usize);
        let (p, q) = (model.point(i), model.point(j));
        let tx = f(&a[0][0]) * p[0] + f(&a[0][1]) * p[1] + f(&b[0]);
        let ty = f(&a[1][0]) * p[0] + f(&a[1][1]) * p[1] + f(&b[1]);
        sq += (tx - q[0]).powi(2) + (ty - q[1]).powi(2);
    }
    assert!(((sq / matches.len() as f64).sqrt() - rms).abs() < 1e-9);

    let mut w = run("two.json", "2");
    let mut v = v;
    for doc in [&mut v, &mut w] {
        doc.as_object_mut().unwrap().remove("wall_time_s");
        doc.as_object_mut().unwrap().remove("trace");
    }
    assert_eq!(v, w);
}
