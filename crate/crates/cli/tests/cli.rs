use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rankflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankflow"))
        .current_dir(dir)
        .env("RANKFLOW_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = rankflow(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn atlas(dir: &Path, n: usize) -> String {
    let mut delta = vec!["0".to_string(); n];
    delta[0] = "1".into();
    let sigma = vec!["1"; n].join(",");
    let name = format!("atlas{n}.json");
    write(dir, &name, &format!(r#"{{"n":{n},"delta":[{}],"sigma":[{sigma}]}}"#, delta.join(",")));
    name
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn constants_for_atlas_four() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 4);
    let out = ok(d.path(), &["constants", "--params", &p, "--out", "o"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let beta = v["beta"].as_f64().unwrap();
    // 4λ_4/min α̃² with λ_4 = 1/(2 − √2) and min α̃ = 1/2.
    let expected = 16.0 / (2.0 - 2f64.sqrt());
    assert!((beta - expected).abs() < 1e-12, "{beta}");
    assert_eq!(v["stable"], Value::Bool(true));
    assert!((v["c_p"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-14);
    assert!(v["skew_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(read_json(&d.path().join("o/constants.json")), v);
    assert!(d.path().join("o/constants.manifest.json").exists());
}

#[test]
fn unstable_model_omits_beta() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.json", r#"{"n":3,"delta":[-1,0,0],"sigma":[1,1,1]}"#);
    let out = ok(d.path(), &["constants", "--params", "p.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stable"], Value::Bool(false));
    assert!(v.get("beta").is_none());
    assert!(v.get("c_nu").is_none());
}

#[test]
fn malformed_json_reports_line_and_column() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.json", "{\"n\": 3,\n  \"delta\": [1, 0 0],\n \"sigma\": [1,1,1]}");
    let out = rankflow(d.path(), &["constants", "--params", "p.json"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ParseError"), "{err}");
    assert!(err.contains("line 2, column 18"), "{err}");
}

#[test]
fn exit_codes_follow_the_error_map() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 4);
    let code = |args: &[&str]| rankflow(d.path(), args).status.code();
    assert_eq!(code(&["constants", "--params", "missing.json"]), Some(4));
    write(d.path(), "short.json", r#"{"n":1,"delta":[1],"sigma":[1]}"#);
    assert_eq!(code(&["constants", "--params", "short.json"]), Some(5));
    assert_eq!(code(&["simulate", "--params", &p, "--dt", "2", "--horizon", "1"]), Some(6));
    write(d.path(), "q.json", r#"{"t":-1,"r":0.1,"eps":1,"sigma2":0.1,"u_inf":1,"u_range":1,"rate":1,"chi2norm":1}"#);
    assert_eq!(code(&["bounds", "--query", "q.json"]), Some(7));
    write(d.path(), "flat.json", r#"{"n":3,"delta":[0,0,0],"sigma":[1,1,1]}"#);
    assert_eq!(
        code(&["stationary", "--params", "flat.json", "--dt", "0.1", "--times", "1,2,3,4", "--paths", "10"]),
        Some(8)
    );
    assert_eq!(
        code(&["stationary", "--params", &p, "--dt", "0.1", "--times", "0.25,1", "--paths", "10"]),
        Some(8)
    );
    assert_eq!(
        code(&["portfolio", "--params", &p, "--kind", "diversity", "--p", "2", "--dt", "0.01", "--horizon", "1"]),
        Some(9)
    );
    assert_eq!(code(&["moments", "--n", "3", "--k", "4", "--delta", "1"]), Some(10));
    assert_eq!(code(&["lyapunov", "--params", &p, "--eps", "5"]), Some(11));
    assert_eq!(code(&["simulate", "--params", &p]), Some(2));
    assert_eq!(code(&["lyapunov", "--params", &p]), Some(0));
}

#[test]
fn simulate_is_deterministic() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 3);
    let args = |out: &'static str| {
        vec!["simulate", "--params", "atlas3.json", "--dt", "1e-3", "--horizon", "10", "--seed", "7", "--out", out]
    };
    assert_eq!(p, "atlas3.json");
    ok(d.path(), &args("a"));
    ok(d.path(), &args("b"));
    let a = fs::read(d.path().join("a/trajectory.csv")).unwrap();
    let b = fs::read(d.path().join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x_1,x_2,x_3,rank_1,rank_2,rank_3,y_1,y_2,mu_1,mu_2,mu_3"
    );
    assert_eq!(lines.count(), 10_001);
    ok(d.path(), &["simulate", "--params", &p, "--dt", "1e-3", "--horizon", "10", "--seed", "8", "--out", "c"]);
    assert_ne!(fs::read(d.path().join("c/trajectory.csv")).unwrap(), b);
}

#[test]
fn reals_round_trip_through_csv() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 3);
    ok(d.path(), &["simulate", "--params", &p, "--dt", "0.01", "--horizon", "1", "--seed", "3"]);
    for row in csv_rows(&d.path().join("trajectory.csv")) {
        let x: Vec<f64> = row[1..4].iter().map(|s| s.parse().unwrap()).collect();
        let y: Vec<f64> = row[7..9].iter().map(|s| s.parse().unwrap()).collect();
        let mut s = x.clone();
        s.sort_by(f64::total_cmp);
        assert_eq!(y, vec![s[1] - s[0], s[2] - s[1]]);
    }
}

#[test]
fn moments_for_two_particles_give_log_two() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["moments", "--n", "2", "--k", "2", "--delta", "1", "--r", "1"]);
    let rows = csv_rows(&d.path().join("moments.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][..4], &["2", "2", "1.0000000000000000e0", "1"]);
    let q: f64 = rows[0][4].parse().unwrap();
    assert!((q - std::f64::consts::LN_2).abs() < 1e-8, "{q}");
    let (mc, se): (f64, f64) = (rows[0][5].parse().unwrap(), rows[0][6].parse().unwrap());
    assert!((mc - std::f64::consts::LN_2).abs() < 4.0 * se);
}

#[test]
fn moments_over_all_ranks_sum_to_one() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["moments", "--n", "4", "--delta", "1", "--mc-draws", "0"]);
    let rows = csv_rows(&d.path().join("moments.csv"));
    assert_eq!(rows.len(), 4);
    let total: f64 = rows.iter().map(|r| r[4].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-8);
    assert!(rows.iter().all(|r| r[5] == "NaN"));
}

#[test]
fn optimized_bound_is_no_larger_than_unit_eps() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "q.json",
        r#"{"t":20,"r":0.2,"eps":1,"sigma2":0.05,"u_inf":0.5,"u_range":1,"rate":3,"chi2norm":1}"#,
    );
    ok(d.path(), &["bounds", "--query", "q.json", "--optimize-eps", "--out", "opt"]);
    ok(d.path(), &["bounds", "--query", "q.json", "--out", "fixed"]);
    let opt = read_json(&d.path().join("opt/bound.json"));
    let fixed = read_json(&d.path().join("fixed/bound.json"));
    let b_opt = opt["bound"]["raw"].as_f64().unwrap();
    let b_fixed = fixed["bound"]["raw"].as_f64().unwrap();
    assert_eq!(b_fixed, opt["bound_at_eps"]["raw"].as_f64().unwrap());
    assert!(b_opt <= b_fixed, "{b_opt} > {b_fixed}");
    assert!(b_opt < b_fixed * 0.99);
}

#[test]
fn every_output_has_a_manifest_and_replays_identically() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 3);
    write(d.path(), "q.json", r#"{"t":5,"r":0.1,"eps":1,"sigma2":0.1,"u_inf":1,"u_range":1,"rate":2,"chi2norm":1}"#);
    let runs: Vec<Vec<&str>> = vec![
        vec!["constants", "--params", &p],
        vec!["simulate", "--params", &p, "--dt", "0.01", "--horizon", "2", "--seed", "5", "--start", "nu"],
        vec!["stationary", "--params", &p, "--dt", "0.05", "--times", "0.5,1,1.5,2", "--paths", "200", "--seed", "4"],
        vec!["bounds", "--query", "q.json", "--optimize-eps"],
        vec!["bounds", "--occupation", "--params", &p, "--horizon", "2", "--dt", "0.01", "--paths", "150", "--r-grid", "0.05,0.1"],
        vec!["portfolio", "--params", &p, "--kind", "quadratic-gini", "--dt", "0.01,0.005", "--horizon", "1", "--paths", "3", "--seed", "9", "--nu-samples", "200"],
        vec!["moments", "--n", "3", "--delta", "1", "--r", "1,2", "--mc-draws", "500", "--seed", "2"],
        vec!["lyapunov", "--params", "atlas3.json", "--v", "1,2"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let out = format!("run{i}");
        let replay = format!("replay{i}");
        let mut full = args.clone();
        full.extend(["--out", &out]);
        ok(d.path(), &full);
        let mut outputs = Vec::new();
        for entry in fs::read_dir(d.path().join(&out)).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            if !name.ends_with(".manifest.json") {
                outputs.push(name);
            }
        }
        assert!(!outputs.is_empty());
        for name in &outputs {
            let stem = Path::new(name).file_stem().unwrap().to_str().unwrap();
            let manifest = d.path().join(&out).join(format!("{stem}.manifest.json"));
            let m = read_json(&manifest);
            assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
            assert!(m["generator"].as_str().unwrap().contains("ChaCha12"));
            assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == name.as_str()));
            ok(d.path(), &["replay", manifest.to_str().unwrap(), "--out", &replay]);
            let a = fs::read(d.path().join(&out).join(name)).unwrap();
            let b = fs::read(d.path().join(&replay).join(name)).unwrap();
            assert_eq!(a, b, "{args:?}: {name} differs after replay");
        }
    }
}

#[test]
fn tampered_manifest_is_rejected() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 3);
    ok(d.path(), &["simulate", "--params", &p, "--dt", "0.1", "--horizon", "1", "--seed", "1"]);
    let path = d.path().join("trajectory.manifest.json");
    let mut m = read_json(&path);
    m["parameters"]["config"]["seed"] = Value::from(2);
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let out = rankflow(d.path(), &["replay", "trajectory.manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ManifestMismatch"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 3);
    let run = |threads: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_rankflow"))
            .current_dir(d.path())
            .env("RANKFLOW_THREADS", threads)
            .args(["stationary", "--params", &p, "--dt", "0.05", "--times", "0.5,1,2", "--paths", "300", "--seed", "3", "--out", out])
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(d.path().join(out).join("tv.csv")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
    let bad = Command::new(env!("CARGO_BIN_EXE_rankflow"))
        .current_dir(d.path())
        .env("RANKFLOW_THREADS", "zero")
        .args(["constants", "--params", &p])
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(2));
}

#[test]
fn lyapunov_report_fields() {
    let d = TempDir::new().unwrap();
    let p = atlas(d.path(), 4);
    ok(d.path(), &["lyapunov", "--params", &p, "--eps", "0.5"]);
    let c = read_json(&d.path().join("certificate.json"));
    assert_eq!(c["v"], serde_json::json!([0.5, 1.5, 0.5]));
    assert_eq!(c["drift_inner"], serde_json::json!(-0.5));
    assert_eq!(c["reflection_inners"], serde_json::json!([-0.25, 1.0, -0.25]));
    assert_eq!(c["valid"], Value::Bool(false));
    assert_eq!(c["farkas_criterion"], Value::Bool(false));
}
