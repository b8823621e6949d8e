//! Suite dispatch and report assembly.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use grushin_core::bounds::{bound_suite, hypothesis_check};
use grushin_core::carleman::{run_suite, standard_suite, CarlemanKind, KindSummary, PotentialSpec};
use grushin_core::field::Constant;
use grushin_core::par;
use grushin_core::quadrature::AnnulusDomain;
use grushin_core::report::{anchors, CheckRecord, Verdict, VerificationReport};
use grushin_core::suites::{identity_suite, ladder_spaces, ladder_suite, rellich_suite, scaling_suite};
use grushin_core::ucp::{k_sweep, reproduction, solve_sublinear, FdGrid, Oscillatory};
use grushin_core::GrushinSpace;

use crate::baseline::{BaselineStore, BaselineSummary};
use crate::config::{CarlemanConfig, ExperimentConfig, SchemaError, UcpConfig, VerifyConfig, VerifySuite};
use crate::tables::{gnuplot_script, Cell, Table};

pub const REPORT_SCHEMA: &str = "grushin-report";
pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Carleman,
    Ucp,
    Baseline,
}

impl Command {
    pub fn label(&self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Carleman => "carleman",
            Command::Ucp => "ucp",
            Command::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub command: Command,
    pub config: ExperimentConfig,
    /// Directory that relative paths in the config resolve against.
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

impl RunOptions {
    /// Loads `config` (or the defaults when absent).
    pub fn load(command: Command, config: Option<&Path>, out: PathBuf, threads: Option<usize>, seed: Option<u64>) -> Result<Self, SchemaError> {
        let (cfg, dir) = match config {
            Some(p) => (ExperimentConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None => (ExperimentConfig::default(), PathBuf::from(".")),
        };
        if threads == Some(0) {
            return Err(SchemaError("--threads must be at least 1".into()));
        }
        Ok(RunOptions { command, config: cfg, config_dir: dir, out, threads, seed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub tool_version: String,
    pub os: String,
    pub arch: String,
    pub parallel: bool,
    pub threads: usize,
}

impl Environment {
    fn capture() -> Self {
        Environment {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            parallel: par::parallel_enabled(),
            threads: par::current_threads(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub name: String,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub diagnostic: usize,
    pub expected_failures: Vec<String>,
    pub unexpected_failures: Vec<String>,
    /// Expectation prefixes that matched no failing record.
    pub unmet_expectations: Vec<String>,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.unexpected_failures.is_empty() && self.unmet_expectations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub schema_version: String,
    pub command: Command,
    pub environment: Environment,
    pub config: ExperimentConfig,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub suites: Vec<SuiteRun>,
    pub records: Vec<CheckRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<BaselineSummary>,
    pub summary: Summary,
    pub exit_status: i32,
}

impl Report {
    pub fn verification(&self) -> VerificationReport {
        VerificationReport { records: self.records.clone() }
    }

    pub fn record(&self, name: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// The report with timing fields zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> Report {
        let mut r = self.clone();
        r.started_unix_seconds = 0;
        r.wall_clock_seconds = 0.0;
        for s in &mut r.suites {
            s.wall_clock_seconds = 0.0;
        }
        r
    }
}

pub struct RunOutput {
    pub report: Report,
    pub tables: Vec<Table>,
}

struct Collector {
    report: VerificationReport,
    tables: Vec<Table>,
    suites: Vec<SuiteRun>,
}

impl Collector {
    /// Runs one suite; an error becomes a failing record and the run goes on.
    fn suite(&mut self, name: &str, anchor: &str, f: impl FnOnce(&mut Collector) -> Result<()>) {
        let t = Instant::now();
        let res = f(self);
        let error = res.err().map(|e| format!("{e:#}"));
        if let Some(msg) = &error {
            self.report.push(CheckRecord::new(format!("error/{name}"), anchor, Verdict::Fail).note(msg.clone()));
        }
        self.suites.push(SuiteRun { name: name.to_string(), wall_clock_seconds: t.elapsed().as_secs_f64(), error });
    }
}

fn verify_suites(c: &mut Collector, cfg: &ExperimentConfig, v: &VerifyConfig, seed: u64) -> Result<(), SchemaError> {
    let space = cfg.space()?;
    let coeff = cfg.coefficients.field();
    let spaces = if v.ladder_matrix { ladder_spaces() } else { vec![space] };
    for s in &v.suites {
        match s {
            VerifySuite::Ladder => c.suite("ladder", anchors::DERIVATIVE_LADDER, |c| {
                let (outs, rep) = ladder_suite(&spaces, v.ladder_points, seed)?;
                let mut t = Table::new("ladder.csv", &["m", "k", "gamma", "order", "compared", "mismatches", "worst_excess", "max_rel_diff"]);
                for o in &outs {
                    for (label, st) in [("first", &o.first), ("second", &o.second), ("third", &o.third), ("psi_gradient", &o.psi_gradient)] {
                        t.push(vec![o.m.into(), o.k.into(), o.gamma.into(), label.into(), st.compared.into(), st.mismatches.into(), st.worst_excess.into(), st.max_rel_diff.into()]);
                    }
                }
                c.tables.push(t);
                c.report.extend(rep);
                Ok(())
            }),
            VerifySuite::Identities => c.suite("identities", anchors::GENERATOR, |c| {
                let mut t = Table::new("identities.csv", &["m", "k", "gamma", "identity", "max_defect", "tolerance"]);
                for (i, s) in spaces.iter().enumerate() {
                    let (_, rep) = identity_suite(s, coeff.as_ref(), v.identity_points, seed.wrapping_add(1000 + i as u64))?;
                    for r in &rep.records {
                        let id = r.name.rsplit_once(&format!("g{}/", s.gamma())).map_or(r.name.as_str(), |x| x.1);
                        t.push(vec![s.m().into(), s.k().into(), s.gamma().into(), id.into(), r.measured["max_defect"].into(), r.tolerance.unwrap_or(f64::NAN).into()]);
                    }
                    c.report.extend(rep);
                }
                c.tables.push(t);
                Ok(())
            }),
            VerifySuite::Bounds => c.suite("bounds", anchors::STRUCTURE, |c| {
                let spec = grushin_core::sampling::SampleSpec { offset: v.samples.offset.wrapping_add(seed), ..v.samples.clone() };
                let out = bound_suite(coeff.as_ref(), &space, &spec)?;
                let mut t = Table::new("bounds.csv", &["item", "sup_ratio", "sup_ratio_doubled", "growth"]);
                for it in &out.items {
                    t.push(vec![it.name.clone().into(), it.sup_base.into(), it.sup_doubled.into(), it.growth.into()]);
                }
                c.tables.push(t);
                c.report.extend(out.report);
                Ok(())
            }),
            VerifySuite::Hypothesis => c.suite("hypothesis", anchors::HYPOTHESIS, |c| {
                let spec = grushin_core::sampling::SampleSpec { offset: v.samples.offset.wrapping_add(seed), ..v.samples.clone() };
                let (_, rep) = hypothesis_check(coeff.as_ref(), &space, &spec)?;
                c.report.extend(rep);
                Ok(())
            }),
            VerifySuite::Rellich => c.suite("rellich", anchors::RELLICH, |c| {
                let (studies, rep) = rellich_suite(&space, &v.rellich_cells)?;
                let mut t = Table::new("rellich.csv", &["coefficient", "function", "cells", "normalized_residual", "error_estimate"]);
                for s in &studies {
                    for (n, o) in s.cells.iter().zip(&s.outcomes) {
                        t.push(vec![s.coefficient.clone().into(), s.function.clone().into(), (*n).into(), o.residual.into(), o.error_estimate.into()]);
                    }
                }
                c.tables.push(t.plot("cells", "normalized_residual", true, true, "Rellich residual under refinement"));
                c.report.extend(rep);
                Ok(())
            }),
            VerifySuite::Scaling => c.suite("scaling", anchors::VANISHING_PROFILE, |c| {
                let mut t = Table::new("scaling.csv", &["degree", "radius", "weighted_integral", "error_estimate"]);
                for &s in &v.scaling_degrees {
                    let (o, rep) = scaling_suite(&space, s, &v.scaling_radii, &v.quadrature)?;
                    for i in 0..o.radii.len() {
                        t.push(vec![s.into(), o.radii[i].into(), o.integrals[i].into(), o.errors[i].into()]);
                    }
                    c.report.extend(rep);
                }
                c.tables.push(t.plot("radius", "weighted_integral", true, true, "integral of u^2 psi over B_r"));
                Ok(())
            }),
        }
    }
    Ok(())
}

fn carleman_tables(summaries: &[KindSummary]) -> Vec<Table> {
    let mut out = Vec::new();
    let mut sweeps = Table::new("carleman_sweeps.csv", &["estimate", "function", "trend_growth", "max_step_growth", "rhs_over_lhs_slope", "max_ratio"]);
    for s in summaries {
        let kind = s.template.kind;
        let Some(first) = s.sweeps.iter().flat_map(|w| &w.sides).next() else { continue };
        let param = if kind == CarlemanKind::Har1 { "beta" } else { "alpha" };
        let mut cols: Vec<String> = vec!["function".into(), param.into(), "epsilon".into()];
        cols.extend(first.lhs_terms.iter().map(|(n, _)| n.clone()));
        for c in ["lhs", "rhs", "ln_scale", "ratio", "lhs_rel_error", "rhs_rel_error", "lhs_via_substitution", "rhs_via_substitution"] {
            cols.push(c.into());
        }
        let mut t = Table::with_columns(&format!("carleman_{}.csv", kind.label()), cols);
        for w in &s.sweeps {
            for side in &w.sides {
                let mut row: Vec<Cell> = vec![side.function.clone().into(), side.case.param.into(), side.case.epsilon.into()];
                row.extend(side.lhs_terms.iter().map(|(_, v)| Cell::Num(*v)));
                for v in [side.lhs, side.rhs, side.ln_scale, side.ratio, side.lhs_rel_error, side.rhs_rel_error, side.lhs_via_substitution, side.rhs_via_substitution] {
                    row.push(v.into());
                }
                t.push(row);
            }
            sweeps.push(vec![kind.label().into(), w.function.clone().into(), w.trend_growth.into(), w.max_step_growth.into(), w.rhs_over_lhs_slope.into(), w.max_ratio().into()]);
        }
        out.push(t.plot(param, "ratio", true, true, &format!("{} LHS/RHS against the weight parameter", kind.label())));
    }
    out.push(sweeps);
    out
}

fn carleman_suite(c: &mut Collector, cfg: &ExperimentConfig, cc: &CarlemanConfig, seed: u64) -> Result<(), SchemaError> {
    let space = cfg.space()?;
    let op = cfg.operator()?;
    c.suite("carleman", anchors::CARLEMAN_POWER, |c| {
        let suite = standard_suite(&space, cc.radius, seed);
        let (summaries, rep) = run_suite(&op, &suite, &cc.templates(), &cc.params, &cc.substitution_params, &cc.quadrature)?;
        c.report.extend(rep);
        for s in &summaries {
            let kind = s.template.kind;
            if let Some(&k) = cc.constants.get(&kind) {
                let worst = s.sweeps.iter().flat_map(|w| &w.sides).filter(|x| x.rhs > 0.0).map(|x| x.ratio / k).fold(0.0, f64::max);
                c.report.push(
                    CheckRecord::new(format!("carleman/{}/archived-constant", kind.label()), kind.anchor(), Verdict::from_bool(s.bounded_by(k)))
                        .value("archived_constant", k)
                        .value("max_ratio", s.max_ratio())
                        .value("max_lhs_over_c_rhs", worst)
                        .tol(1.0),
                );
            }
        }
        c.tables.extend(carleman_tables(&summaries));
        Ok(())
    });
    Ok(())
}

fn ucp_suites(c: &mut Collector, cfg: &ExperimentConfig, u: &UcpConfig) -> Result<(), SchemaError> {
    let op = cfg.operator()?;
    let domain = AnnulusDomain::new(u.r_in, u.r_out).map_err(|e| SchemaError(e.to_string()))?;
    c.suite("ucp-reproduction", anchors::LINEAR_UCP, |c| {
        let grids: Vec<FdGrid> = u.grids.iter().map(|&n| FdGrid::new(n)).collect();
        let r = reproduction(&op, &domain, &grids, u.tol)?;
        let mut t = Table::new("ucp_reproduction.csv", &["cells", "constant_max_error", "fundamental_max_error", "solver_residual"]);
        for i in 0..r.cells.len() {
            t.push(vec![r.cells[i].into(), r.constant_errors[i].into(), r.fundamental_errors[i].into(), r.residuals[i].into()]);
        }
        c.tables.push(t.plot("cells", "fundamental_max_error", true, true, "fundamental solution error"));
        c.report.extend(r.records());
        Ok(())
    });
    c.suite("ucp-k-sweep", anchors::VANISHING_ORDER, |c| {
        let r = k_sweep(&op, &u.ks, &Oscillatory { frequency: u.frequency }, &FdGrid::new(u.k_cells), &u.radii, u.tol)?;
        let mut prof = Table::new("ucp_vanishing.csv", &["k", "radius", "sup_norm", "weighted_l2"]);
        let mut sl = Table::new("ucp_ksweep.csv", &["k", "sup_slope", "integral_slope", "k_two_thirds_plus_one"]);
        for (i, p) in r.profiles.iter().enumerate() {
            for j in 0..p.radii.len() {
                prof.push(vec![r.ks[i].into(), p.radii[j].into(), p.sup_norms[j].into(), p.weighted_l2[j].into()]);
            }
            sl.push(vec![r.ks[i].into(), p.sup_slope.into(), p.integral_slope.into(), r.comparison[i].into()]);
        }
        c.tables.push(prof.plot("radius", "sup_norm", true, true, "sup |u| on B_r"));
        c.tables.push(sl.plot("k", "sup_slope", true, false, "vanishing order against K"));
        c.report.push(r.record());
        Ok(())
    });
    if let Some(s) = u.sublinear {
        c.suite("ucp-sublinear", anchors::SUBLINEAR_UCP, |c| {
            let f = PotentialSpec::sublinear(s.c, s.q);
            let out = solve_sublinear(&op, &f, &PotentialSpec::None, &domain, &Constant(1.0), &FdGrid::new(s.cells), &s.fixed_point)?;
            let mut t = Table::new("ucp_sublinear.csv", &["iteration", "update_sup_norm"]);
            for (i, h) in out.history.iter().enumerate() {
                t.push(vec![(i + 1).into(), (*h).into()]);
            }
            c.tables.push(t.plot("iteration", "update_sup_norm", false, true, "sublinear fixed point"));
            let max_u = out.solution.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            c.report.push(
                CheckRecord::new("ucp/sublinear-solve", anchors::SUBLINEAR_UCP, Verdict::from_bool(out.converged && out.equation_residual <= s.fixed_point.tol))
                    .value("iterations", out.history.len() as f64)
                    .value("scaled_equation_residual", out.equation_residual)
                    .value("max_abs_u", max_u)
                    .tol(s.fixed_point.tol)
                    .archive("max_abs_u", 0.01),
            );
            Ok(())
        });
    }
    Ok(())
}

fn records_table(rep: &VerificationReport) -> Table {
    let mut t = Table::new("records.csv", &["name", "anchor", "verdict", "quantity", "value"]);
    for r in &rep.records {
        let verdict = match r.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Diagnostic => "diagnostic",
        };
        for (k, v) in &r.measured {
            t.push(vec![r.name.clone().into(), r.anchor.clone().into(), verdict.into(), k.clone().into(), (*v).into()]);
        }
    }
    t
}

fn summarize(rep: &VerificationReport, expected: &[String]) -> Summary {
    let mut s = Summary::default();
    let mut hit = vec![false; expected.len()];
    for r in &rep.records {
        match r.verdict {
            Verdict::Pass => s.pass += 1,
            Verdict::Diagnostic => s.diagnostic += 1,
            Verdict::Fail => {
                s.fail += 1;
                let m: Vec<usize> = expected.iter().enumerate().filter(|(_, p)| r.name.starts_with(p.as_str())).map(|(i, _)| i).collect();
                if m.is_empty() {
                    s.unexpected_failures.push(r.name.clone());
                } else {
                    m.iter().for_each(|&i| hit[i] = true);
                    s.expected_failures.push(r.name.clone());
                }
            }
        }
    }
    s.unmet_expectations = expected.iter().zip(&hit).filter(|(_, h)| !**h).map(|(p, _)| p.clone()).collect();
    s
}

/// Runs the command. Schema problems surface as `Err` before any suite runs;
/// suite failures are folded into the report.
pub fn execute(opts: &RunOptions) -> Result<RunOutput, SchemaError> {
    if let Some(n) = opts.threads {
        par::configure_threads(n);
    }
    let mut cfg = opts.config.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let seed = cfg.seed;
    let _: GrushinSpace = cfg.space()?;
    let t0 = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut c = Collector { report: VerificationReport::new(), tables: Vec::new(), suites: Vec::new() };
    let (do_verify, do_carleman, do_ucp) = match opts.command {
        Command::Verify => (true, false, false),
        Command::Carleman => (false, true, false),
        Command::Ucp => (false, false, true),
        Command::Baseline => (cfg.verify.is_some(), cfg.carleman.is_some(), cfg.ucp.is_some()),
    };
    if opts.command == Command::Baseline && !(do_verify || do_carleman || do_ucp) {
        return Err(SchemaError("baseline needs at least one of the verify, carleman, ucp tables".into()));
    }
    // the echo shows the sections that actually ran, with defaults filled in
    if do_verify {
        let v = cfg.verify.get_or_insert_with(VerifyConfig::default).clone();
        verify_suites(&mut c, &cfg, &v, seed)?;
    }
    if do_carleman {
        let cc = cfg.carleman.get_or_insert_with(CarlemanConfig::default).clone();
        carleman_suite(&mut c, &cfg, &cc, seed)?;
    }
    if do_ucp {
        let u = cfg.ucp.get_or_insert_with(UcpConfig::default).clone();
        ucp_suites(&mut c, &cfg, &u)?;
    }
    let mut baseline = None;
    if opts.command == Command::Baseline {
        let path = match &cfg.baseline {
            Some(b) if b.path.is_relative() => opts.config_dir.join(&b.path),
            Some(b) => b.path.clone(),
            None => opts.out.join("baseline.json"),
        };
        c.suite("baseline", anchors::BASELINE, |c| {
            let mut store = BaselineStore::load(&path)?;
            let (sum, recs) = store.apply(&c.report);
            store.save(&path)?;
            c.report.extend(recs);
            baseline = Some(sum);
            Ok(())
        });
    }
    for r in c.report.orphan_anchors() {
        c.report.push(CheckRecord::new("report/orphan-anchor", anchors::BASELINE, Verdict::Fail).note(r));
    }
    let summary = summarize(&c.report, &cfg.expectations.fail);
    let exit_status = if summary.ok() { 0 } else { 1 };
    c.tables.push(records_table(&c.report));
    let report = Report {
        schema: REPORT_SCHEMA.into(),
        schema_version: REPORT_SCHEMA_VERSION.into(),
        command: opts.command,
        environment: Environment::capture(),
        config: cfg,
        started_unix_seconds: started,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
        suites: c.suites,
        records: c.report.records,
        baseline,
        summary,
        exit_status,
    };
    Ok(RunOutput { report, tables: c.tables })
}

/// Writes `report.json`, every table and `plot.gp` into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(&out.report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    for t in &out.tables {
        t.write(dir)?;
    }
    std::fs::write(dir.join("plot.gp"), gnuplot_script(&out.tables))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectations_are_matched_by_prefix() {
        let mut rep = VerificationReport::new();
        rep.push(CheckRecord::new("a/x", anchors::RADIAL, Verdict::Fail));
        rep.push(CheckRecord::new("b/y", anchors::RADIAL, Verdict::Pass));
        let s = summarize(&rep, &["a/".into()]);
        assert!(s.ok());
        let s = summarize(&rep, &["a/".into(), "b/".into()]);
        assert_eq!(s.unmet_expectations, vec!["b/".to_string()]);
        let s = summarize(&rep, &[]);
        assert!(!s.ok());
    }
}
