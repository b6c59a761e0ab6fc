use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stein-fclt"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("stein_fclt_cli_{}_{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn runs_bound_report() {
    let d = scratch("bound");
    let cfg = write(&d, "c.json", r#"{"kind":"runs","n":1000,"p":0.5,"rs":"2,1"}"#);
    let out = d.join("out");
    let st = bin().args(["bound", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let r = report(&out);
    for k in ["gamma1", "gamma2"] {
        assert!(r["result"]["prelimit"]["terms"][k].as_f64().unwrap() > 0.0);
    }
    assert!(r["result"]["limit"]["terms"]["gamma3"].as_f64().unwrap() > 0.0);
    assert!(r["metadata"]["wall_time_s"].is_number());
}

#[test]
fn graph_verify_regression_exit_zero() {
    let d = scratch("graphverify");
    let st = bin().args(["graph", "verify", "--n", "5", "--out"]).arg(&d).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(report(&d)["result"]["max_two_star_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn config_errors_exit_two() {
    let d = scratch("bad");
    let bad = write(&d, "bad.json", "{\"kind\": \"graph\",\n \"n\": 5,");
    let out = bin().args(["verify", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let unknown = write(&d, "u.json", r#"{"kind":"graph","n":5,"p":0.5,"colour":1}"#);
    assert_eq!(bin().args(["bound", "--config"]).arg(&unknown).status().unwrap().code(), Some(2));
    let wrong = write(&d, "w.json", r#"{"kind":"graph","n":5,"p":0.5,"action":"simulate"}"#);
    assert_eq!(bin().args(["verify", "--config"]).arg(&wrong).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["bound"]).status().unwrap().code(), Some(2));
}

#[test]
fn phi_of_wrong_dimension_is_a_config_error() {
    let d = scratch("phi");
    let cfg = write(
        &d,
        "c.json",
        r#"{"kind":"uprocess","action":"verify-distance","n":6,"measure":{"atoms":[[-1.0,0.5],[1.0,0.5]]},
            "components":[{"weights":{"builtin":"complete","p":1},"kernel":{"type":"product"},"sigma":1.0}],
            "limit_phi":[[1.0, 0.0],[0.0, 1.0]],"target":"limit","reps":10}"#,
    );
    let out = bin().args(["verify", "--config"]).arg(&cfg).arg("--out").arg(&d).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("limit_phi"));
}

#[test]
fn failed_check_exits_four() {
    let d = scratch("viol");
    let ok = write(
        &d,
        "c.json",
        r#"{"kind":"homsum","action":"verify-covariance","n":10,"measure":{"sampler":"rademacher"},
            "components":[{"weights":{"builtin":"complete","p":1}}],"reps":500,"times":[1.0]}"#,
    );
    assert_eq!(bin().args(["verify", "--config"]).arg(&ok).arg("--out").arg(&d).status().unwrap().code(), Some(0));
    // at n = 10 the graph path has visibly smaller variance than its continuous limit
    let off = write(
        &d,
        "b.json",
        r#"{"kind":"graph","action":"verify-covariance","n":10,"p":0.5,"reps":2000,"target":"limit","times":[0.5, 1.0]}"#,
    );
    assert_eq!(bin().args(["verify", "--config"]).arg(&off).arg("--out").arg(&d).status().unwrap().code(), Some(4));
}

#[test]
fn reports_are_byte_identical_across_threads() {
    let d = scratch("det");
    let cfg = write(&d, "c.json", r#"{"kind":"graph","action":"verify-distance","n":20,"p":0.5,"reps":300,"seed":5}"#);
    let mut bodies = Vec::new();
    for t in ["1", "4"] {
        let out = d.join(format!("t{t}"));
        let st = bin().args(["verify", "--threads", t, "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
        assert_eq!(st.code(), Some(0));
        let mut r = report(&out);
        r.as_object_mut().unwrap().remove("metadata");
        bodies.push(serde_json::to_string(&r).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn simulate_and_rate_artifacts() {
    let d = scratch("art");
    let st = bin().args(["graph", "simulate", "--n", "12", "--seed", "3", "--out"]).arg(&d).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(d.join("path.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14);
    let cfg = write(&d, "r.json", r#"{"kind":"graph","n":20,"p":0.5,"ns":[20,40,80],"functionals":2,"reps":200}"#);
    let st = bin().args(["rate", "--emit-svg", "--config"]).arg(&cfg).arg("--out").arg(&d).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(std::fs::read_to_string(d.join("rate.svg")).unwrap().contains("slope"));
    assert!(std::fs::read_to_string(d.join("rate.csv")).unwrap().starts_with("n,functional,estimate,se,bound"));
}
