use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use knockoffs::io::{read_csv, write_csv, Table};
use nalgebra::DMatrix;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_knockoffs"));
    c.env_remove("KNOCKOFF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_on_every_subcommand() {
    for sub in [None, Some("knockoffs"), Some("select"), Some("crt"), Some("simulate")] {
        let mut args = Vec::from_iter(sub);
        args.push("--help");
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{sub:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn unknown_flag_exits_2() {
    let o = run(&["select", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_model_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    write(&x, "a,b\n1,2\n3,4\n");
    let missing = dir.path().join("no_such_model.json");
    let o = run(&["knockoffs", "--x", s(&x), "--model", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_model.json"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    write(&model, r#"{"kind": "gaussian_ar1", "p": 2, "rho": 0}"#);
    let out = dir.path().join("o");
    let x = dir.path().join("x.csv");
    write(&x, "a,b\n1,2\n3,oops\n");
    let o = run(&["knockoffs", "--x", s(&x), "--model", s(&model), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":3:2:"), "{}", stderr(&o));
    write(&x, "a,b\n1,2\n3\n");
    let o = run(&["knockoffs", "--x", s(&x), "--model", s(&model), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));
}

#[test]
fn zero_s_copies_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    write(&x, "a,b\n0.5,-1.25\n2,3\n-0.1,7e-3\n");
    let model = dir.path().join("m.json");
    write(&model, r#"{"kind": "gaussian", "sigma": [[1, 0], [0, 1]], "s": [0, 0]}"#);
    let out = dir.path().join("o");
    let o = run(&["knockoffs", "--x", s(&x), "--model", s(&model), "--s", "eq", "--seed", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = read_csv(&x).unwrap();
    let b = read_csv(&out.join("x_tilde.csv")).unwrap();
    assert_eq!(a, b);
    assert!(out.join("provenance.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let x = fixture("planted/x.csv");
    let model = fixture("planted/model.json");
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("o{k}"));
        let o = run(&[
            "knockoffs", "--x", s(&x), "--model", s(&model), "--s", "sdp", "--seed", "11", "--threads", threads,
            "--out", s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let m = json(&out.join("manifest.json"));
        outputs.push((
            std::fs::read(out.join("x_tilde.csv")).unwrap(),
            std::fs::read(out.join("provenance.json")).unwrap(),
            m["config_hash"].clone(),
            m["outputs"].clone(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn select_validates_q() {
    let dir = tempfile::tempdir().unwrap();
    let f = |n: &str| fixture(&format!("planted/{n}"));
    let o = run(&[
        "select", "--x", s(&f("x.csv")), "--x-tilde", s(&f("x_tilde.csv")), "--y", s(&f("y.csv")), "--q", "1.5",
        "--out", s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("q"));
}

#[test]
fn select_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    let xt = dir.path().join("xt.csv");
    let y = dir.path().join("y.csv");
    write(&x, "a,b\n1,2\n3,4\n5,6\n");
    write(&xt, "a,b\n1,2\n3,4\n5,6\n");
    write(&y, "y\n1\n2\n");
    let o = run(&["select", "--x", s(&x), "--x-tilde", s(&xt), "--y", s(&y), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn all_negative_w_gives_inf_sentinel() {
    // knockoffs carry the signal and originals are noise, so every W is
    // negative or zero
    let dir = tempfile::tempdir().unwrap();
    let n = 60;
    let x = DMatrix::from_fn(n, 3, |i, j| (((i * 7 + j * 13) % 17) as f64 - 8.0) / 5.0);
    let xt = DMatrix::from_fn(n, 3, |i, j| (((i * 5 + j * 3) % 11) as f64 - 5.0) / 3.0);
    let y: Vec<f64> = (0..n).map(|i| xt[(i, 0)] + xt[(i, 1)] - xt[(i, 2)]).collect();
    write_csv(&dir.path().join("x.csv"), &Table::with_default_header(x, "x")).unwrap();
    write_csv(&dir.path().join("xt.csv"), &Table::with_default_header(xt, "x")).unwrap();
    write_csv(&dir.path().join("y.csv"), &Table::with_default_header(DMatrix::from_vec(n, 1, y), "y")).unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "select", "--x", s(&dir.path().join("x.csv")), "--x-tilde", s(&dir.path().join("xt.csv")), "--y",
        s(&dir.path().join("y.csv")), "--statistic", "lsm", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&out.join("selection.json"));
    assert!(r["w"].as_array().unwrap().iter().all(|w| w.as_f64().unwrap() <= 0.0), "{r}");
    assert_eq!(r["threshold"], "inf");
    assert_eq!(r["selected"].as_array().unwrap().len(), 0);
}

#[test]
fn planted_signal_fixture_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let f = |n: &str| fixture(&format!("planted/{n}"));
    let expected = json(&f("expected.json"));
    // regenerating the knockoffs reproduces the frozen copy
    let o = run(&[
        "knockoffs", "--x", s(&f("x.csv")), "--model", s(&f("model.json")), "--s", "eq", "--seed", "7", "--out",
        s(&dir.path().join("k")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("k/x_tilde.csv")).unwrap(), std::fs::read(f("x_tilde.csv")).unwrap());
    let out = dir.path().join("s");
    let o = run(&[
        "select", "--x", s(&f("x.csv")), "--x-tilde", s(&f("x_tilde.csv")), "--y", s(&f("y.csv")), "--statistic",
        "lcd", "--q", "0.2", "--seed", "3", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&out.join("selection.json"));
    assert_eq!(r["selected"], expected["selected"]);
    let m = json(&out.join("manifest.json"));
    assert!(m["outputs"]["selection.json"].is_string());
}

#[test]
fn crt_writes_pvalues() {
    let dir = tempfile::tempdir().unwrap();
    let f = |n: &str| fixture(&format!("planted/{n}"));
    let out = dir.path().join("c");
    let o = run(&[
        "crt", "--x", s(&f("x.csv")), "--y", s(&f("y.csv")), "--model", s(&f("model.json")), "--lambda", "0.1",
        "--k", "19", "--early-stop-cutoff", "0.3", "--q", "0.2", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("pvalues.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("feature,name,statistic,p_value,randomizations"));
    let p: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(p.len(), 30);
    for j in [2, 7, 11, 19, 26] {
        assert_eq!(p[j], 0.05, "feature {j}");
    }
    assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
    let meta = json(&out.join("crt.json"));
    assert_eq!(meta["lambda_source"], "flag");
    let o = run(&["crt", "--x", s(&f("x.csv")), "--y", s(&f("y.csv")), "--model", s(&f("model.json")), "--k", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_simulation_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    write(
        &cfg,
        r#"{"experiment": "scenario", "n": 50, "p": 10, "design": {"kind": "ar1", "rho": 0.3},
            "response": "gaussian_linear", "k_nonzero": 3, "amplitude": 8, "reps": 3, "seed": 5}"#,
    );
    let out = dir.path().join("o");
    let start = Instant::now();
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out), "--threads", "1"]);
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(secs < 5.0, "{secs} s");
    let reps = std::fs::read_to_string(out.join("reps.csv")).unwrap();
    let header = reps.lines().next().unwrap();
    for col in ["scenario_hash", "rep", "fdp", "power", "threshold", "seed"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    assert_eq!(reps.lines().count(), 4);
    for file in ["summary.csv", "summary.dat", "metadata.json", "manifest.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let meta = json(&out.join("metadata.json"));
    assert!(meta["scale_factors"]["n"].is_number());
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    write(
        &cfg,
        r#"{"experiment": "scenario", "n": 50, "p": 10, "design": {"kind": "ar1", "rho": 1.5},
            "response": "gaussian_linear", "k_nonzero": 3, "amplitude": 8, "reps": 3, "seed": 5}"#,
    );
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho"));
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let data = DMatrix::from_fn(7, 3, |i, j| {
        let v = (i as f64 + 1.0) / (j as f64 + 3.0);
        v.powi(i as i32 * 7 - 20) * if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
    });
    let t = Table::with_default_header(data, "c");
    write_csv(&path, &t).unwrap();
    assert_eq!(read_csv(&path).unwrap(), t);
}
