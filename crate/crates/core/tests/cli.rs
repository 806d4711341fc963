use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use otkd::cli::{run, EXIT_KIND_MISMATCH, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_SCHEMA, EXIT_SIZE_CAP, EXIT_UNWRITABLE};
use otkd::harness::random_instance;
use otkd::io::write_predictions;
use otkd::distill::LossKind;
use otkd::prediction::{DenseCell, DenseCodePredictionSet, KeypointCell, KeypointPredictionSet, PredictionSet};
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn otkd(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("otkd").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn json(o: &Outcome) -> Value {
    serde_json::from_str(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", o.stdout))
}

fn keypoint_file(dir: &TempDir, name: &str, votes: &[[f64; 2]]) -> PathBuf {
    let set = KeypointPredictionSet::new(
        [1.0, 1.0],
        1,
        votes
            .iter()
            .enumerate()
            .map(|(i, &v)| KeypointCell {
                cell_xy: [i as i64, 0],
                score: 1.0,
                votes: vec![v],
            })
            .collect(),
    )
    .unwrap();
    let path = dir.path().join(name);
    write_predictions(&path, &set.into()).unwrap();
    path
}

fn write(dir: &TempDir, name: &str, set: &PredictionSet) -> PathBuf {
    let path = dir.path().join(name);
    write_predictions(&path, set).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn loss_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let (s, _) = random_instance(LossKind::OtKeypoint, 1).unwrap();
    let a = write(&dir, "a.json", &s);
    let o = otkd(&["loss", p(&a), p(&a)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&o);
    assert!(v["total"].as_f64().unwrap().abs() <= 8e-8);
    assert_eq!(v["loss"], "ot-keypoint");
    assert_eq!(v["per_corner"].as_array().unwrap().len(), 8);
}

#[test]
fn presets_set_the_published_hyperparameters() {
    let dir = TempDir::new().unwrap();
    let a = keypoint_file(&dir, "a.json", &[[0.0, 0.0]]);
    let b = keypoint_file(&dir, "b.json", &[[0.3, 0.4]]);
    let v = json(&otkd(&["loss", p(&a), p(&b), "--preset", "linemod-kp"]));
    assert_eq!((v["epsilon"].as_f64(), v["rho"].as_f64()), (Some(0.001), Some(0.5)));
    assert_eq!(v["loss_weight"].as_f64(), Some(5.0));
    let v = json(&otkd(&["loss", p(&a), p(&b), "--preset", "occ-kp", "--rho", "1e6"]));
    assert_eq!(v["loss_weight"].as_f64(), Some(0.1));
    assert!((v["total"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    let v = json(&otkd(&["loss", p(&a), p(&b), "--loss", "naive"]));
    assert_eq!(v["total"].as_f64(), Some(0.5));
    let v = json(&otkd(&["loss", p(&a), p(&b), "--raw", "--p", "1"]));
    assert_eq!(v["debiased"], false);
    assert_eq!(v["p"], 1);
}

#[test]
fn dense_files_use_the_dense_preset() {
    let dir = TempDir::new().unwrap();
    let (s, t) = random_instance(LossKind::OtDense, 2).unwrap();
    let (a, b) = (write(&dir, "a.json", &s), write(&dir, "b.json", &t));
    let v = json(&otkd(&["loss", p(&a), p(&b)]));
    assert_eq!(v["loss"], "ot-dense");
    assert_eq!((v["epsilon"].as_f64(), v["rho"].as_f64()), (Some(0.0001), Some(0.1)));
    let zp = json(&otkd(&["loss", p(&a), p(&b), "--preset", "zebrapose"]));
    assert_eq!(zp["total"], v["total"]);
    assert_eq!(zp["loss_weight"].as_f64(), Some(100.0));
}

#[test]
fn mismatched_kinds_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let k = keypoint_file(&dir, "k.json", &[[0.0, 0.0]]);
    let dense = DenseCodePredictionSet::new(
        [1, 1],
        1,
        vec![DenseCell {
            score: 1.0,
            code: vec![0.5],
        }],
    )
    .unwrap();
    let d = write(&dir, "d.json", &dense.into());
    assert_eq!(otkd(&["loss", p(&k), p(&d)]).code, EXIT_KIND_MISMATCH);
    assert_eq!(otkd(&["loss", p(&k), p(&k), "--loss", "ot-dense"]).code, EXIT_KIND_MISMATCH);
    assert_eq!(otkd(&["oracle", p(&d), p(&k)]).code, EXIT_KIND_MISMATCH);
}

#[test]
fn schema_errors_exit_with_two_and_say_where() {
    let dir = TempDir::new().unwrap();
    let good = keypoint_file(&dir, "good.json", &[[0.0, 0.0]]);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"kind\": \"keypoints\",\n  \"image_size\": [1, 1],\n  \"num_keypoints\": \"one\",\n  \"cells\": []\n}").unwrap();
    let o = otkd(&["loss", p(&bad), p(&good)]);
    assert_eq!(o.code, EXIT_SCHEMA);
    assert!(o.stderr.contains("line 4") && o.stderr.contains("num_keypoints"), "{}", o.stderr);
}

#[test]
fn strict_mode_reports_non_convergence() {
    let dir = TempDir::new().unwrap();
    let (s, t) = random_instance(LossKind::OtKeypoint, 3).unwrap();
    let (a, b) = (write(&dir, "a.json", &s), write(&dir, "b.json", &t));
    let loose = otkd(&["loss", p(&a), p(&b), "--max-iter", "1"]);
    assert_eq!(loose.code, EXIT_OK);
    assert_eq!(json(&loose)["converged"], false);
    assert_eq!(otkd(&["loss", p(&a), p(&b), "--max-iter", "1", "--strict"]).code, EXIT_NOT_CONVERGED);
    assert_eq!(otkd(&["loss", p(&a), p(&b), "--strict"]).code, EXIT_OK);
}

#[test]
fn oracle_values_and_size_cap() {
    let dir = TempDir::new().unwrap();
    let a = keypoint_file(&dir, "a.json", &[[0.0, 0.0]]);
    let b = keypoint_file(&dir, "b.json", &[[0.3, 0.4]]);
    let v = json(&otkd(&["oracle", p(&a), p(&b)]));
    assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-15);

    let c = keypoint_file(&dir, "c.json", &[[0.0, 0.0], [1.0, 0.0]]);
    let d = keypoint_file(&dir, "d.json", &[[0.0, 1.0], [1.0, 1.0]]);
    let v = json(&otkd(&["oracle", p(&c), p(&d)]));
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["plan"].as_array().unwrap().len(), 2);

    let u = json(&otkd(&["oracle", p(&a), p(&b), "--mode", "unbalanced"]));
    let s = 1e-6 + 2.0 * 0.25;
    assert!((u["value"].as_f64().unwrap() - s * (1.0 - (-0.5f64 / s).exp())).abs() < 1e-6);

    let many: Vec<[f64; 2]> = (0..40).map(|i| [i as f64 / 40.0, 0.5]).collect();
    let big = keypoint_file(&dir, "big.json", &many);
    assert_eq!(otkd(&["oracle", p(&big), p(&a)]).code, EXIT_SIZE_CAP);
    assert_eq!(otkd(&["oracle", p(&c), p(&big), "--mode", "unbalanced"]).code, EXIT_SIZE_CAP);
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn demo_writes_one_row_per_step() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("demo");
    let o = otkd(&["demo", "--out", p(&out), "--steps", "1"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    for tag in ["naive", "ot_keypoint"] {
        let t = out.join(format!("trajectory_{tag}.csv"));
        assert_eq!(data_rows(&t), 1);
        assert!(fs::read_to_string(&t)
            .unwrap()
            .starts_with("step,loss,divergence,corner_error,wallclock_ms\n"));
        assert!(fs::read_to_string(out.join(format!("scatter_{tag}.csv")))
            .unwrap()
            .starts_with("role,corner,x,y,weight\n"));
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["naive"]["steps"], 1);
    assert_eq!(summary["ot_keypoint"]["steps"], 1);
}

#[test]
fn demo_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(otkd(&["demo", "--out", p(out), "--steps", "25", "--seed", "4"]).code, EXIT_OK);
    }
    for name in [
        "trajectory_naive.csv",
        "trajectory_ot_keypoint.csv",
        "scatter_naive.csv",
        "scatter_ot_keypoint.csv",
        "summary.json",
    ] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn demo_into_a_file_path_is_unwritable() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = otkd(&["demo", "--out", p(&blocker.join("sub")), "--steps", "1"]);
    assert_eq!(o.code, EXIT_UNWRITABLE);
    assert!(o.stderr.contains("cannot write"));
}

#[test]
fn sweep_emits_one_row_per_configuration() {
    let o = otkd(&["sweep", "--losses", "ot-keypoint", "--epsilons", "0.001", "--rhos", "0.5", "--steps", "3"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 2);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("sweep.csv");
    let o = otkd(&[
        "sweep", "--losses", "naive,ot-keypoint", "--epsilons", "0.001", "--rhos", "0.25,0.5,1", "--steps", "3", "--out",
        p(&path),
    ]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(data_rows(&path), 6);
}

#[test]
fn grad_check_passes_on_files_and_random_instances() {
    let dir = TempDir::new().unwrap();
    let (s, _) = random_instance(LossKind::OtKeypoint, 5).unwrap();
    let a = write(&dir, "a.json", &s);
    let o = otkd(&["grad-check", p(&a), p(&a)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stdout);

    let x = keypoint_file(&dir, "x.json", &[[0.0, 0.0]]);
    let y = keypoint_file(&dir, "y.json", &[[1.0, 0.0]]);
    let v = json(&otkd(&["grad-check", p(&x), p(&y), "--rho", "1e6"]));
    assert_eq!(v["passed"], true);
    let worst = &v["instances"][0]["worst"];
    assert!((worst["analytic"].as_f64().unwrap() + 1.0).abs() < 1e-6, "{worst}");

    let o = otkd(&["grad-check", "--random", "10", "--seed", "7"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stdout);
    let v = json(&o);
    assert_eq!(v["instances"].as_array().unwrap().len(), 10);
    assert!(v["max_rel_error"].as_f64().unwrap() <= 1e-4);

    assert_eq!(otkd(&["grad-check"]).code, EXIT_SCHEMA);
}

#[test]
fn binary_maps_errors_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let k = keypoint_file(&dir, "k.json", &[[0.0, 0.0]]);
    let bin = env!("CARGO_BIN_EXE_otkd");
    let status = Command::new(bin)
        .args(["loss", p(&k), p(&k)])
        .env("OTKD_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK));
    let v: Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(v["total"].as_f64(), Some(0.0));
    let missing = Command::new(bin).args(["loss", "nope.json", p(&k)]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let bad_threads = Command::new(bin)
        .args(["loss", p(&k), p(&k)])
        .env("OTKD_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_threads.stderr).contains("OTKD_THREADS"));
}
