//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full configuration in `tests/data/acceptance.toml` twice per
//! command. Failures listed in `KNOWN_FAILURES` print FAIL but do not fail
//! the target; anything else does.

use std::path::PathBuf;
use std::process::ExitCode;

use grushin_cli::config::ExperimentConfig;
use grushin_cli::run::{execute, Command, Report, RunOptions};
use grushin_core::report::{CheckRecord, Verdict};

/// Record prefixes that fail on the current implementation, with the reason.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "carleman/f10/sweep/",
    "sublinear estimate: LHS/RHS of half the suite grows by more than 10% per doubling over {20,40,80,160}",
)];

const LADDER_SECONDS: f64 = 60.0;
const BOUNDS_SECONDS: f64 = 300.0;
const RELLICH_SECONDS: f64 = 300.0;
const CARLEMAN_SECONDS: f64 = 900.0;
const UCP_SECONDS: f64 = 600.0;
const EXACT_IDENTITY_TOL: f64 = 1e-8;
const RELLICH_ORDER: f64 = 2.0;
const RELLICH_FINAL: f64 = 1e-3;
const SCALING_TOL: f64 = 0.05;
const KSWEEP_MAX_EXPONENT: f64 = 1.0;

struct Line {
    id: u32,
    title: &'static str,
    ok: bool,
    detail: String,
    failing: Vec<String>,
}

fn config() -> (ExperimentConfig, PathBuf) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    (ExperimentConfig::load(&dir.join("acceptance.toml")).expect("acceptance config"), dir)
}

fn run(command: Command, out: &std::path::Path) -> Report {
    let (cfg, dir) = config();
    let opts = RunOptions { command, config: cfg, config_dir: dir, out: out.to_path_buf(), threads: None, seed: None };
    execute(&opts).expect("acceptance config is valid").report
}

fn suite_seconds(r: &Report, names: &[&str]) -> f64 {
    r.suites.iter().filter(|s| names.contains(&s.name.as_str())).map(|s| s.wall_clock_seconds).sum()
}

fn with_prefix<'a>(r: &'a Report, p: &str) -> Vec<&'a CheckRecord> {
    r.records.iter().filter(|x| x.name.starts_with(p)).collect()
}

fn failing(recs: &[&CheckRecord]) -> Vec<String> {
    recs.iter().filter(|r| r.verdict == Verdict::Fail).map(|r| r.name.clone()).collect()
}

fn suite_errors(r: &Report, names: &[&str]) -> Vec<String> {
    r.suites.iter().filter(|s| names.contains(&s.name.as_str())).filter_map(|s| s.error.as_ref().map(|e| format!("error/{}: {e}", s.name))).collect()
}

fn value(r: &CheckRecord, k: &str) -> f64 {
    r.measured.get(k).copied().unwrap_or(f64::NAN)
}

fn ladder(v: &Report) -> Line {
    let recs: Vec<&CheckRecord> = with_prefix(v, "ladder/").into_iter().filter(|r| r.verdict != Verdict::Diagnostic).collect();
    let t = suite_seconds(v, &["ladder"]);
    let mut f = failing(&recs);
    f.extend(suite_errors(v, &["ladder"]));
    let compared: f64 = recs.iter().filter_map(|r| r.measured.get("compared")).sum();
    let ok = f.is_empty() && recs.len() == 45 && t <= LADDER_SECONDS;
    Line { id: 1, title: "derivative ladder vs nested central differences", ok, detail: format!("{} checks, {compared:.0} entries compared, {t:.1}s (limit {LADDER_SECONDS}s)", recs.len()), failing: f }
}

fn identities(v: &Report) -> Line {
    const EXACT: &[&str] = &["generator-rho", "generator-psi", "gradient-norm-psi", "f-rho/", "f-equals-z-identity", "radial", "fundamental-solution"];
    let recs = with_prefix(v, "identity/");
    let mut f = failing(&recs);
    f.extend(suite_errors(v, &["identities"]));
    let mut worst = 0.0f64;
    let mut exact = 0;
    for r in &recs {
        let id = r.name.splitn(3, '/').nth(2).unwrap_or("");
        if EXACT.iter().any(|e| id.starts_with(e)) {
            exact += 1;
            worst = worst.max(value(r, "max_defect"));
            if !(value(r, "max_defect") <= EXACT_IDENTITY_TOL) && !f.contains(&r.name) {
                f.push(r.name.clone());
            }
        }
    }
    let ok = f.is_empty() && exact > 0 && recs.iter().all(|r| value(r, "points") >= 100.0);
    Line { id: 2, title: "exact identities at 100 points", ok, detail: format!("{exact} exact checks, worst relative defect {worst:.2e} (tol {EXACT_IDENTITY_TOL:e})"), failing: f }
}

fn bounds(v: &Report) -> Line {
    let mut recs = with_prefix(v, "bounds/");
    recs.extend(with_prefix(v, "hypothesis/"));
    let mut f = failing(&recs);
    f.extend(suite_errors(v, &["bounds", "hypothesis"]));
    let growth = recs.iter().filter_map(|r| r.measured.get("growth")).fold(0.0f64, |a, b| a.max(b.abs()));
    let finite = recs.iter().filter_map(|r| r.measured.get("sup_ratio_doubled")).all(|x| x.is_finite());
    let t = suite_seconds(v, &["bounds", "hypothesis"]);
    let ok = f.is_empty() && finite && t <= BOUNDS_SECONDS;
    Line { id: 3, title: "structural bound suite, 1e4 vs 2e4 samples", ok, detail: format!("{} records, worst change {:.2}% (limit 10%), {t:.1}s", recs.len(), 100.0 * growth), failing: f }
}

fn rellich(v: &Report) -> Line {
    let recs = with_prefix(v, "rellich/");
    let mut f = failing(&recs);
    f.extend(suite_errors(v, &["rellich"]));
    let min_order = recs.iter().map(|r| value(r, "order")).fold(f64::INFINITY, f64::min);
    let max_final = recs.iter().map(|r| value(r, "final_residual")).fold(0.0f64, f64::max);
    let t = suite_seconds(v, &["rellich"]);
    let ok = f.is_empty() && recs.len() == 6 && min_order >= RELLICH_ORDER && max_final <= RELLICH_FINAL && t <= RELLICH_SECONDS;
    Line {
        id: 4,
        title: "Rellich residual under refinement, 2x3 matrix",
        ok,
        detail: format!("{} studies, min order {min_order:.2} (>= {RELLICH_ORDER}), max final residual {max_final:.2e} (<= {RELLICH_FINAL:e}), {t:.1}s", recs.len()),
        failing: f,
    }
}

fn carleman(c: &Report) -> Line {
    let recs = with_prefix(c, "carleman/");
    let mut f = failing(&recs);
    f.extend(suite_errors(c, &["carleman"]));
    let archived = recs.iter().filter(|r| r.name.ends_with("/archived-constant")).count();
    let sweeps = recs.iter().filter(|r| r.name.contains("/sweep/")).count();
    let t = suite_seconds(c, &["carleman"]);
    let ok = f.is_empty() && archived == 4 && sweeps == 80 && t <= CARLEMAN_SECONDS;
    Line {
        id: 5,
        title: "Carleman suites EST1/DF/F10/HAR1, archived constants, trend, substitution",
        ok,
        detail: format!("{sweeps} sweeps, {archived} archived constants, {t:.0}s (limit {CARLEMAN_SECONDS}s)"),
        failing: f,
    }
}

fn scaling(v: &Report) -> Line {
    let r = v.records.iter().find(|r| r.name == "quadrature/scaling/s0");
    let (e, q) = r.map_or((f64::NAN, f64::NAN), |r| (value(r, "exponent"), value(r, "expected")));
    let ok = (e - q).abs() <= SCALING_TOL && q == 3.0;
    let f = if ok { vec![] } else { vec!["quadrature/scaling/s0".into()] };
    Line { id: 6, title: "ball integral of psi scales like r^Q", ok, detail: format!("exponent {e:.4}, Q = {q} (tol {SCALING_TOL})"), failing: f }
}

fn ucp(u: &Report) -> Line {
    let recs = with_prefix(u, "ucp/");
    let mut f = failing(&recs);
    f.extend(suite_errors(u, &["ucp-reproduction", "ucp-k-sweep", "ucp-sublinear"]));
    let k = u.records.iter().find(|r| r.name == "ucp/k-sweep");
    let (e, mono) = k.map_or((f64::NAN, 0.0), |r| (value(r, "fitted_exponent"), value(r, "monotone")));
    let t = suite_seconds(u, &["ucp-reproduction", "ucp-k-sweep", "ucp-sublinear"]);
    let ok = f.is_empty() && e <= KSWEEP_MAX_EXPONENT && mono == 1.0 && t <= UCP_SECONDS;
    Line { id: 7, title: "UCP lab: reproduction and K-sweep", ok, detail: format!("fitted exponent {e:.3} (<= {KSWEEP_MAX_EXPONENT}), monotone {}, {t:.1}s", mono == 1.0), failing: f }
}

fn determinism(pairs: &[(Report, Report)]) -> Line {
    let mut f = Vec::new();
    for (a, b) in pairs {
        if a.without_timings() != b.without_timings() {
            f.push(format!("{:?}", a.command));
        }
    }
    let n: usize = pairs.iter().map(|p| p.0.records.len()).sum();
    Line { id: 8, title: "determinism: identical seeds give identical reports", ok: f.is_empty(), detail: format!("{} commands, {n} records compared", pairs.len()), failing: f }
}

fn known(name: &str) -> Option<&'static str> {
    KNOWN_FAILURES.iter().find(|(p, _)| name.starts_with(p)).map(|k| k.1)
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are ignored; the suite always runs in full.
    let dir = tempfile::tempdir().expect("temp dir");
    let mut pairs = Vec::new();
    for c in [Command::Verify, Command::Carleman, Command::Ucp] {
        let a = run(c, dir.path());
        let b = run(c, dir.path());
        pairs.push((a, b));
    }
    let (v, c, u) = (&pairs[0].0, &pairs[1].0, &pairs[2].0);
    let lines = [ladder(v), identities(v), bounds(v), rellich(v), carleman(c), scaling(v), ucp(u), determinism(&pairs)];
    let mut unexpected = 0;
    for l in &lines {
        println!("criterion {} {}: {} ({})", l.id, if l.ok { "PASS" } else { "FAIL" }, l.title, l.detail);
        let mut reasons: Vec<&str> = Vec::new();
        for n in &l.failing {
            match known(n) {
                Some(r) => {
                    if !reasons.contains(&r) {
                        reasons.push(r);
                    }
                }
                None => {
                    unexpected += 1;
                    println!("    unexpected failure: {n}");
                }
            }
        }
        let n_known = l.failing.iter().filter(|n| known(n).is_some()).count();
        for r in reasons {
            println!("    known failure ({n_known} records): {r}");
        }
        if !l.ok && l.failing.is_empty() {
            unexpected += 1;
            println!("    criterion failed without failing records (count or runtime limit)");
        }
    }
    if unexpected > 0 {
        println!("acceptance: {unexpected} unexpected failures");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all failures are known and documented");
        ExitCode::SUCCESS
    }
}
