use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lagnet::formats::{Checkpoint, ModelKind, FORMAT_VERSION};
use lagnet_core::{Mlp, NetworkConfig};
use serde_json::Value;

fn lagnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lagnet(args);
    assert!(
        out.status.success(),
        "lagnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, system: &str, count: &str, steps: &str, dt: &str, seed: &str) {
    ok(&[
        "gen", "--system", system, "--count", count, "--steps", steps, "--dt", dt, "--seed", seed, "--out", p(dir),
    ]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gen_writes_expected_rows_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "pendulum", "10", "500", "0.01", "7");
    gen(&b, "pendulum", "10", "500", "0.01", "7");
    let text = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 * 501);
    assert_eq!(text.lines().next().unwrap(), "traj,t,q0,qd0,a0");
    for f in ["dataset.csv", "dataset.meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let meta = json(&a.join("dataset.meta.json"));
    assert_eq!(meta["count"], 10);
    assert_eq!(meta["d"], 1);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    gen(&a, "double_pendulum", "3", "4", "0.05", "11");
    let cfg = a.join("resolved_config.json");
    let mut value = json(&cfg);
    let b = tmp.path().join("b");
    value["out"] = Value::String(p(&b).into());
    let rerun = tmp.path().join("rerun.json");
    fs::write(&rerun, value.to_string()).unwrap();
    ok(&["gen", "--config", p(&rerun)]);
    assert_eq!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn toml_config_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.toml");
    fs::write(&cfg, "system = \"harmonic\"\ncount = 5\nsteps = 3\ndt = 0.1\nseed = 1\n").unwrap();
    let out = tmp.path().join("d");
    ok(&["gen", "--config", p(&cfg), "--count", "2", "--out", p(&out)]);
    assert_eq!(fs::read_to_string(out.join("dataset.csv")).unwrap().lines().count(), 1 + 2 * 4);
    assert_eq!(json(&out.join("resolved_config.json"))["count"], 2);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lagnet(&["gen", "--system", "quantum", "--seed", "1", "--out", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("double_pendulum"));
    let missing_seed = lagnet(&["gen", "--system", "pendulum", "--out", p(tmp.path())]);
    assert_eq!(code(&missing_seed), 2);
    assert!(stderr(&missing_seed).contains("seed"));
    assert_eq!(code(&lagnet(&["gen", "--bogus"])), 2);
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = lagnet(&[
        "gen", "--system", "harmonic", "--count", "1", "--steps", "2", "--seed", "1", "--out",
        p(&blocker.join("sub")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn train_with_zero_epochs_writes_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "4", "3", "0.1", "2");
    let out = tmp.path().join("m");
    ok(&["train", "--data", p(&data), "--epochs", "0", "--seed", "5", "--out", p(&out)]);
    let ckpt = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    let expected = Mlp::new(NetworkConfig::desk(2, 5)).unwrap().init().into_flat();
    assert_eq!(ckpt.flat_parameters, expected);
    assert_eq!(ckpt.epoch, 0);
    assert_eq!(fs::read_to_string(out.join("loss_curve.csv")).unwrap(), "epoch,train_loss,val_loss\n");
    let report = json(&out.join("report.json"));
    assert_eq!(report["train_loss"].as_array().unwrap().len(), 0);
    assert_eq!(report["steps"], 0);
}

#[test]
fn train_requires_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "4", "3", "0.1", "2");
    let out = lagnet(&["train", "--data", p(&data), "--out", p(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn truncated_dataset_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "4", "3", "0.1", "2");
    let csv = data.join("dataset.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let cut = text.trim_end().rfind(',').unwrap();
    fs::write(&csv, &text[..cut]).unwrap();
    let out = lagnet(&["train", "--data", p(&data), "--seed", "1", "--out", p(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
}

#[test]
fn corrupt_number_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "harmonic", "2", "3", "0.1", "2");
    let csv = data.join("dataset.csv");
    let text = fs::read_to_string(&csv).unwrap().replacen("0,1.0000000000000001e-1,", "0,1.0x,", 1);
    fs::write(&csv, text).unwrap();
    let out = lagnet(&["train", "--data", p(&csv), "--seed", "1", "--out", p(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn desk_training_reduces_validation_loss_tenfold() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "60", "20", "0.1", "3");
    let out = tmp.path().join("m");
    ok(&[
        "train", "--data", p(&data), "--preset", "desk", "--epochs", "20", "--lr-initial", "3e-3", "--seed", "1",
        "--out", p(&out),
    ]);
    let report = json(&out.join("report.json"));
    let initial = report["initial_val_loss"].as_f64().unwrap();
    let last = report["val_loss"].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert!(last <= 0.1 * initial, "validation loss {initial} -> {last}");
    assert_eq!(csv_rows(&out.join("loss_curve.csv")).len(), 20);
    assert_eq!(Checkpoint::load(&out.join("checkpoint.json")).unwrap().epoch, 19);
}

fn zero_checkpoint(path: &Path, d: usize) {
    let network = Mlp::new(NetworkConfig::desk(2 * d, 0)).unwrap();
    let n = network.param_count();
    Checkpoint {
        format_version: FORMAT_VERSION,
        model: ModelKind::Lagrangian,
        network,
        flat_parameters: vec![0.0; n],
        seed: 0,
        system: None,
        epoch: 0,
    }
    .save(path)
    .unwrap();
}

#[test]
fn eval_reports_zero_loss_for_an_exact_model() {
    // A network with all-zero parameters predicts zero acceleration, which
    // is exact for a free particle.
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "free_particle", "1", "2", "0.1", "4");
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt, 2);
    let out = tmp.path().join("e");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out)]);
    let m = json(&out.join("metrics.json"));
    assert!(m["mean_loss"].as_f64().unwrap() <= 1e-12);
    assert_eq!(m["samples"], 3);
    assert_eq!(m["per_trajectory"][0]["energy_drift"], 0.0);
    assert!(out.join("metrics.csv").is_file());
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "2", "2", "0.1", "4");
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt, 2);
    let out = lagnet(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&tmp.path().join("e"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "4", "5", "0.1", "8");
    let model = tmp.path().join("m");
    ok(&["train", "--data", p(&data), "--epochs", "1", "--seed", "2", "--out", p(&model)]);
    let ckpt = model.join("checkpoint.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(out), "--rollout-steps", "20",
        ]);
    }
    for f in ["metrics.json", "metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn analytic_harmonic_rollout_tracks_the_exact_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r.csv");
    ok(&[
        "rollout", "--analytic", "harmonic", "--init", "1,0", "--dt", "0.001", "--steps", "6284", "--out", p(&out),
    ]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 6285);
    let last = rows.last().unwrap();
    let t = last[0];
    assert!((t - 6.284).abs() < 1e-12);
    assert!((last[1] - t.cos()).abs() <= 1e-6);
    assert!((last[2] + t.sin()).abs() <= 1e-6);
    assert!((last[1] - 1.0).abs() <= 1e-6);
    let h0 = rows[0][3];
    assert_eq!(h0, 0.5);
    let drift = rows.iter().map(|r| (r[3] - h0).abs()).fold(0.0, f64::max) / h0;
    assert!(drift <= 1e-6, "energy drift {drift}");
}

#[test]
fn rollout_with_zero_steps_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r.csv");
    ok(&["rollout", "--analytic", "pendulum", "--init", "0.3,-0.1", "--steps", "0", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), "t,q0,qd0,H");
}

#[test]
fn malformed_init_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(&tmp.path().join("r.csv")).to_string();
    for init in ["1,x", "1", "1,2,3", ""] {
        let r = lagnet(&["rollout", "--analytic", "harmonic", "--init", init, "--out", &out]);
        assert_eq!(code(&r), 2, "init `{init}`");
    }
    let neither = lagnet(&["rollout", "--init", "1,0", "--out", &out]);
    assert_eq!(code(&neither), 2);
}

#[test]
fn learned_rollout_reports_energy_and_degeneracy() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt, 1);
    let out = tmp.path().join("r.csv");
    let r = ok(&["rollout", "--checkpoint", p(&ckpt), "--init", "0.5,1", "--dt", "0.1", "--steps", "3", "--out", p(&out)]);
    assert!(stderr(&r).contains("13 degenerate"), "{}", stderr(&r));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[2] == 1.0));
}

#[test]
fn field_accel_matches_dense_and_round_trips_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    ok(&["field-accel", "--sites", "33", "--dx", "0.5", "--seed", "3", "--out", p(&a)]);
    let s = json(&a.join("summary.json"));
    assert_eq!(s["dense_compared"], true);
    assert!(s["max_abs_diff"].as_f64().unwrap() <= 1e-10);
    let b = tmp.path().join("b");
    ok(&["field-accel", "--field", p(&a.join("field.csv")), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("accel.csv")).unwrap(), fs::read(b.join("accel.csv")).unwrap());

    let phi: Vec<f64> = csv_rows(&a.join("field.csv")).iter().map(|r| r[1]).collect();
    let acc = csv_rows(&a.join("accel.csv"));
    let n = phi.len();
    for (i, row) in acc.iter().enumerate() {
        let expect = (phi[(i + 2) % n] - 2.0 * phi[i] + phi[(i + n - 2) % n]) / (4.0 * 0.25);
        assert!((row[1] - expect).abs() <= 1e-10);
    }
}

#[test]
fn lattice_density_model_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("w");
    ok(&[
        "gen", "--system", "wave1d", "--sites", "8", "--dx", "0.5", "--count", "4", "--steps", "3", "--dt", "0.1",
        "--seed", "3", "--out", p(&data),
    ]);
    let model = tmp.path().join("m");
    ok(&[
        "train", "--data", p(&data), "--model", "lattice_density", "--epochs", "2", "--seed", "1", "--out", p(&model),
    ]);
    let ckpt = Checkpoint::load(&model.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.model, ModelKind::LatticeDensity { sites: 8, dx: 0.5 });
    assert_eq!(ckpt.network.config.input_dim, 6);
    let out = tmp.path().join("e");
    ok(&[
        "eval", "--checkpoint", p(&model.join("checkpoint.json")), "--data", p(&data), "--out", p(&out),
        "--rollout-steps", "3",
    ]);
    assert!(json(&out.join("metrics.json"))["mean_loss"].as_f64().unwrap().is_finite());
}

#[test]
fn divergence_exits_4_and_keeps_the_last_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "pendulum", "40", "10", "0.1", "3");
    let out = tmp.path().join("m");
    let r = lagnet(&["train", "--data", p(&data), "--epochs", "3", "--lr-initial", "1e3", "--seed", "1", "--out", p(&out)]);
    assert_eq!(code(&r), 4, "{}", stderr(&r));
    assert!(stderr(&r).contains("diverged"));
    let ckpt = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    assert!(ckpt.flat_parameters.iter().all(|v| v.is_finite()));
    assert!(out.join("loss_curve.csv").is_file());
    assert!(!out.join("report.json").exists());
}
