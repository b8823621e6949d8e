use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const SMALL_UCP: &str = r#"
schema_version = 1

[ucp]
grids = [16, 32]
ks = [1.0, 10.0, 100.0]
k_cells = 24
radii = [0.5, 0.35, 0.25]
sublinear = { c = 0.5, q = 1.5, cells = 16, fixed_point = { tol = 1e-10, damping = 1.0, max_iter = 100 } }
"#;

fn grushin(args: &[&str], config: Option<&Path>, out: &Path) -> i32 {
    let mut c = Command::new(env!("CARGO_BIN_EXE_grushin"));
    c.args(args).arg("--out").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().expect("binary runs").status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn schema_violations_exit_2_without_report() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    for (i, text) in ["schema_version = 1\nsead = 3\n", "schema_version = 1\n[ucp\n", "schema_version = 7\n", "{\"schema_version\": 1, \"verify\": {\"suites\": [\"nope\"]}}"].iter().enumerate() {
        let cfg = write(d.path(), &format!("c{i}.toml"), text);
        assert_eq!(grushin(&["ucp"], Some(&cfg), &out), 2, "{text}");
        assert!(!out.join("report.json").exists());
    }
    let cfg = write(d.path(), "ok.toml", SMALL_UCP);
    assert_eq!(grushin(&["ucp", "--threads", "0"], Some(&cfg), &out), 2);
    assert_eq!(grushin(&["ucp"], Some(&d.path().join("missing.toml")), &out), 2);
    assert_eq!(grushin(&["baseline"], Some(&write(d.path(), "empty.toml", "schema_version = 1\n")), &out), 2);
    assert!(!out.join("report.json").exists());
}

#[test]
fn ucp_run_writes_report_tables_and_plot() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write(d.path(), "u.toml", SMALL_UCP);
    assert_eq!(grushin(&["ucp", "--seed", "99"], Some(&cfg), &out), 0);
    let r = report(&out);
    assert_eq!(r["schema"], "grushin-report");
    assert_eq!(r["schema_version"], "1.0.0");
    assert_eq!(r["command"], "ucp");
    assert_eq!(r["config"]["seed"], 99);
    assert_eq!(r["exit_status"], 0);
    assert!(r["records"].as_array().unwrap().iter().any(|x| x["name"] == "ucp/k-sweep"));
    for f in ["ucp_reproduction.csv", "ucp_vanishing.csv", "ucp_ksweep.csv", "ucp_sublinear.csv", "records.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(!text.contains('\r'), "{f}");
        assert!(text.ends_with('\n'));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!(header.iter().all(|h| !h.is_empty() && !h.contains(' ')), "{f}");
        assert!(lines.all(|l| !l.contains(';')));
    }
    let plot = std::fs::read_to_string(out.join("plot.gp")).unwrap();
    assert!(plot.contains("ucp_ksweep.csv") && plot.contains("set datafile separator ','"));
}

#[test]
fn failures_and_expectations_drive_the_exit_code() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let base = "schema_version = 1\n[coefficients]\nfamily = \"sqrt_violation\"\nc = 0.5\nbig_lambda = 2.0\n[verify]\nsuites = [\"hypothesis\"]\nsamples = { count = 500 }\n";
    // the hypothesis fails for b_11 = c rho^{1/2}
    assert_eq!(grushin(&["verify"], Some(&write(d.path(), "a.toml", base)), &out), 1);
    let r = report(&out);
    assert_eq!(r["summary"]["unexpected_failures"].as_array().unwrap().len(), 1);
    let expected = format!("{base}[expectations]\nfail = [\"hypothesis/\"]\n");
    assert_eq!(grushin(&["verify"], Some(&write(d.path(), "b.toml", &expected)), &out), 0);
    assert_eq!(report(&out)["summary"]["expected_failures"].as_array().unwrap().len(), 1);
    // an expectation that never happens is itself a failure
    let unmet = "schema_version = 1\n[expectations]\nfail = [\"identity/\"]\n[verify]\nsuites = [\"scaling\"]\nscaling_degrees = [0.0]\n";
    assert_eq!(grushin(&["verify"], Some(&write(d.path(), "c.toml", unmet)), &out), 1);
    assert_eq!(report(&out)["summary"]["unmet_expectations"][0], "identity/");
}

#[test]
fn baseline_store_first_write_then_compare() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write(d.path(), "b.toml", &format!("{SMALL_UCP}\n[baseline]\npath = \"store.json\"\n"));
    let store = d.path().join("store.json");
    assert_eq!(grushin(&["baseline"], Some(&cfg), &out), 0);
    assert!(store.exists());
    assert_eq!(report(&out)["baseline"]["created"], true);
    assert_eq!(grushin(&["baseline"], Some(&cfg), &out), 0);
    let r = report(&out);
    assert_eq!(r["baseline"]["created"], false);
    assert!(r["baseline"]["compared"].as_u64().unwrap() > 0);
    assert_eq!(r["baseline"]["drifted"], 0);

    let mut s: Value = serde_json::from_str(&std::fs::read_to_string(&store).unwrap()).unwrap();
    for (_, e) in s["entries"].as_object_mut().unwrap() {
        let v = e["value"].as_f64().unwrap();
        e["value"] = Value::from(v * 1.5 + 1.0);
    }
    std::fs::write(&store, serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(grushin(&["baseline"], Some(&cfg), &out), 1);
    assert!(report(&out)["baseline"]["drifted"].as_u64().unwrap() > 0);

    // a corrupt store is a runtime error: partial report, exit 1
    std::fs::write(&store, "{ broken").unwrap();
    assert_eq!(grushin(&["baseline"], Some(&cfg), &out), 1);
    let r = report(&out);
    assert!(r["records"].as_array().unwrap().iter().any(|x| x["name"] == "error/baseline"));
    assert!(r["records"].as_array().unwrap().iter().any(|x| x["name"] == "ucp/k-sweep"));
}

#[test]
fn json_config_is_accepted() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write(d.path(), "v.json", r#"{"schema_version": 1, "verify": {"suites": ["scaling"], "scaling_degrees": [0.0]}}"#);
    assert_eq!(grushin(&["verify"], Some(&cfg), &out), 0);
    let text = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert!(text.starts_with("degree,radius,weighted_integral,error_estimate\n"));
}
