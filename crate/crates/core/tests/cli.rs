use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn run(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_intercept"));
    c.args(args).env_remove("INTERCEPT_OUT_DIR");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn intercept")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `key = value` lines of the summary.
fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no {key:?} in\n{text}"))
}

fn floats(s: &str) -> Vec<f64> {
    s.trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|x| x.trim().parse().unwrap_or_else(|_| panic!("bad number {x:?}")))
        .collect()
}

fn solve_data_i(out: &Path) -> Output {
    let o = run(
        &["solve", "--scenario", scenario("data_I").to_str().unwrap(), "--tol", "1e-12", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    o
}

fn artifact(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap()
}

#[test]
fn solve_prints_artifact_values() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&solve_data_i(dir.path()));
    assert!(text.starts_with("Converged: one-impulse-free on data I"), "{text}");
    let art = artifact(dir.path());
    let p = &art["parameters"];

    let cost: f64 = field(&text, "cost").parse().unwrap();
    assert_eq!(cost, art["report"]["cost"].as_f64().unwrap());
    assert!((cost - 774.9142).abs() <= 1e-4, "{cost}");

    let th: f64 = field(&text, "t_impact").parse().unwrap();
    assert_eq!(th, p["th"].as_f64().unwrap());
    assert!((th - 697.5637).abs() <= 1e-4);

    let t1: f64 = field(&text, "t1").parse().unwrap();
    assert_eq!(t1, p["t1"].as_f64().unwrap());
    assert!(t1.abs() <= 1e-9);

    let dv = floats(field(&text, "dv1"));
    let want: Vec<f64> = p["dv1"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(dv, want);

    let miss: f64 = field(&text, "interception miss").parse().unwrap();
    assert_eq!(miss, art["report"]["interception_miss"].as_f64().unwrap());
    assert!(miss <= 1.0);

    for f in ["solution.json", "trajectory.csv", "primer.csv", "report.txt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn trajectory_has_enough_points_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "solve",
            "--scenario",
            scenario("ex6").to_str().unwrap(),
            "--samples",
            "10",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("segment,t,rM_x"));
    let mut per_seg = std::collections::BTreeMap::new();
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), header.split(',').count());
        for c in &cols[1..] {
            c.parse::<f64>().unwrap_or_else(|_| panic!("bad cell {c:?}"));
        }
        *per_seg.entry(cols[0].to_string()).or_insert(0usize) += 1;
    }
    assert_eq!(per_seg.len(), 3);
    assert!(per_seg.values().all(|&n| n >= 200), "{per_seg:?}");
}

#[test]
fn verify_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    solve_data_i(dir.path());
    let art = artifact(dir.path());
    let sol = dir.path().join("solution.json");
    let sc = scenario("data_I");

    let o = run(&["verify", "--solution", sol.to_str().unwrap(), "--scenario", sc.to_str().unwrap()], &[]);
    let text = stdout(&o);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.contains("verification passed"));
    let cost: f64 = field(&text, "cost").parse().unwrap();
    let miss: f64 = field(&text, "interception miss").parse().unwrap();
    assert!((cost - art["report"]["cost"].as_f64().unwrap()).abs() <= 1e-9);
    assert!((miss - art["report"]["interception_miss"].as_f64().unwrap()).abs() <= 1e-9);

    // 1 m/s on one impulse component misses by hundreds of meters
    let mut bad = art.clone();
    let x = bad["parameters"]["dv1"][0].as_f64().unwrap();
    bad["parameters"]["dv1"][0] = (x + 1.0).into();
    let bad_path = dir.path().join("tampered.json");
    std::fs::write(&bad_path, serde_json::to_string(&bad).unwrap()).unwrap();
    let o = run(&["verify", "--solution", bad_path.to_str().unwrap(), "--scenario", sc.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 4, "{}", stdout(&o));
    assert!(stdout(&o).contains("violation"));

    let other = scenario("data_II");
    let o = run(&["verify", "--solution", sol.to_str().unwrap(), "--scenario", other.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_scenario_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        r#"{ "data_set": "I", "variant": "one-impulse-free", "tol": 1e-9, "guess": { "th": 700 } "#,
        r#"{ "data_set": "IV", "variant": "one-impulse-free" }"#,
        r#"{ "data_set": "I", "variant": "one-impulse-free", "tol": 1e-3 }"#,
        r#"{ "data_set": "I", "variant": "no-such-variant" }"#,
        r#"{ "data_set": "I", "variant": "one-impulse-free", "bogus": 1 }"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&path, text).unwrap();
        let o = run(&["solve", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.join("solution.json").exists());
    }
    let o = run(&["solve", "--scenario", "/nonexistent.json", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--scenario", scenario("data_I").to_str().unwrap()], &[("INTERCEPT_OUT_DIR", dir.path())]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("solution.json").is_file());
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("fixed_t1");
    let args = ["sweep", "--scenario", sc.to_str().unwrap(), "--grid", "0:0.1:0.3", "--scaled", "--out"];
    let o = run(&[&args[..], &[dir.path().to_str().unwrap()]].concat(), &[]);
    let text = stdout(&o);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.contains("monotonic: yes"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    let costs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[1] > w[0]), "{costs:?}");
}

#[test]
fn empty_or_bad_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for grid in ["5:1:2", "0:0:1", "10,5", "a,b"] {
        let o = run(
            &["sweep", "--scenario", scenario("fixed_t1").to_str().unwrap(), "--grid", grid, "--out", dir.path().to_str().unwrap()],
            &[],
        );
        assert_eq!(code(&o), 2, "grid {grid}");
    }
}

#[test]
fn convergence_failure_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--scenario", scenario("first_at_t0").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 3);
    assert!(!dir.path().join("solution.json").exists());
    let f: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("failure.json")).unwrap()).unwrap();
    assert!(f["error"].as_str().unwrap().contains("Newton"));
    let csv = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}
