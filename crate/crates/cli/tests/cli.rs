use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specmarket"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(config("symmetric.json")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("edited.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn symmetric_price_on_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", config("symmetric.json").to_str().unwrap(), "--static", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    let p = s["p_dyn"].as_f64().unwrap();
    assert!((p - 1.25).abs() / 1.25 < 2e-3, "{p}");
    assert!(s["residual"].as_f64().unwrap() <= 1e-8);
    assert!((s["p_sta"].as_f64().unwrap() - 1.5).abs() < 5e-3);
    // the summary numbers are repeated in summary.csv
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.contains(&format!("p_dyn,{p:?}")));
    let header = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(header.starts_with("t,x,v,theta,phi_0,phi_1\n"));
}

#[test]
fn constant_payoff_gives_constant_prices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["payoff"] = serde_json::json!({"kind": "constant", "value": 3.5}));
    let out_dir = dir.path().join("out");
    let out = run(&["solve", cfg.to_str().unwrap(), "--grid-nx", "101", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_path(out_dir.join("solution.csv")).unwrap();
    for rec in reader.records() {
        assert_eq!(&rec.unwrap()[2], "3.5");
    }
}

#[test]
fn bad_inputs_exit_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["supply"]["value"] = serde_json::json!(-1.0));
    let out = run(&["solve", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(run(&["solve", broken.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["solve", "/nonexistent/spec.json"]).status.code(), Some(2));

    let sym = config("symmetric.json");
    let out = run(&["solve", sym.to_str().unwrap(), "--grid-nt", "10", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CFL"));

    let huge = write_config(dir.path(), |v| {
        v["payoff"] = serde_json::json!({"kind": "affine", "intercept": 0.0, "slope": 1e307})
    });
    let out = run(&["solve", huge.to_str().unwrap(), "--grid-nx", "101", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn artifacts_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("three_agents.json");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "solve",
            cfg.to_str().unwrap(),
            "--static",
            "--grid-nx",
            "151",
            "--mc",
            "--paths",
            "2000",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["solution.csv", "summary.csv"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let s = summary(&dir.path().join("a"));
    assert_eq!(s["mc"]["n_paths"], 2000);
}

#[test]
fn sweeps_follow_comparative_statics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("asymmetric.json");
    let column = |param: &str, values: &str| -> Vec<f64> {
        let out_dir = dir.path().join(param);
        let out = run(&[
            "sweep",
            cfg.to_str().unwrap(),
            "--param",
            param,
            "--values",
            values,
            "--grid-nx",
            "201",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut reader = csv::Reader::from_path(out_dir.join("sweep.csv")).unwrap();
        reader.records().map(|r| r.unwrap()[2].parse().unwrap()).collect()
    };
    let p = column("common-scale", "0.5,1,2");
    assert!(p.iter().all(|x| (x - p[1]).abs() <= 1e-6), "{p:?}");
    let p = column("s-scale", "0.5,1,2");
    assert!(p.windows(2).all(|w| w[1] <= w[0] + 1e-8), "{p:?}");
    let p = column("alpha_plus", "1,10,100");
    assert!(p.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{p:?}");
    assert_eq!(run(&["sweep", cfg.to_str().unwrap(), "--param", "beta", "--values", "1"]).status.code(), Some(2));
}

#[test]
fn verify_reports_and_exit_codes() {
    let out = run(&["verify", "--only", "4,5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS [ 4] clearing duality"));
    assert_eq!(run(&["verify", "--only", "4,5"]).stdout, text.as_bytes());

    let out = run(&["verify", "--only", "1", "--perturb-theta", "0.01"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL [ 1] symmetric-cost closed form"), "{text}");

    assert_eq!(run(&["verify", "--only", "99"]).status.code(), Some(2));
}
