//! Per-check records and verdicts.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Diagnostic,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Anchors a record may cite; each names the identity or estimate checked.
pub mod anchors {
    pub const GAUGE_AND_ANGLE: &str = "gauge-and-angle";
    pub const DILATIONS: &str = "dilations";
    pub const GENERATOR: &str = "generator";
    pub const VECTOR_FIELDS: &str = "vector-fields";
    pub const DERIVATIVE_LADDER: &str = "gauge-derivative-ladder";
    pub const ANGLE_DERIVATIVES: &str = "angle-derivatives";
    pub const COMMUTATOR: &str = "generator-commutator";
    pub const GRADIENT_GENERATOR: &str = "gradient-generator-identity";
    pub const RADIAL: &str = "radial-identity";
    pub const HYPOTHESIS: &str = "structural-hypothesis";
    pub const MU_SIGMA_F: &str = "mu-sigma-f";
    pub const STRUCTURE: &str = "structure-estimates";
    pub const SECOND_BOUNDS: &str = "second-derivative-bounds";
    pub const PERTURBATION_BOUNDS: &str = "perturbation-bounds";
    pub const THIRD_BOUND: &str = "third-derivative-bound";
    pub const OPERATOR: &str = "divergence-form-operator";
    pub const FUNDAMENTAL: &str = "fundamental-solution";
    pub const RELLICH: &str = "rellich-identity";
    pub const QUADRATURE: &str = "weighted-quadrature";
    pub const VANISHING_PROFILE: &str = "vanishing-profile";
    pub const CARLEMAN_POWER: &str = "carleman-power-exponential-weight";
    pub const CARLEMAN_C1: &str = "carleman-c1-potential";
    pub const CARLEMAN_SUBLINEAR: &str = "carleman-sublinear";
    pub const CARLEMAN_LOG: &str = "carleman-log-squared-weight";
    pub const CARLEMAN_SUBSTITUTION: &str = "carleman-substitution";
    pub const LINEAR_UCP: &str = "linear-potential-solve";
    pub const SUBLINEAR_UCP: &str = "sublinear-solve";
    pub const VANISHING_ORDER: &str = "vanishing-order";
    pub const BASELINE: &str = "regression-baseline";

    pub const ALL: &[&str] = &[
        GAUGE_AND_ANGLE,
        DILATIONS,
        GENERATOR,
        VECTOR_FIELDS,
        DERIVATIVE_LADDER,
        ANGLE_DERIVATIVES,
        COMMUTATOR,
        GRADIENT_GENERATOR,
        RADIAL,
        HYPOTHESIS,
        MU_SIGMA_F,
        STRUCTURE,
        SECOND_BOUNDS,
        PERTURBATION_BOUNDS,
        THIRD_BOUND,
        OPERATOR,
        FUNDAMENTAL,
        RELLICH,
        QUADRATURE,
        VANISHING_PROFILE,
        CARLEMAN_POWER,
        CARLEMAN_C1,
        CARLEMAN_SUBLINEAR,
        CARLEMAN_LOG,
        CARLEMAN_SUBSTITUTION,
        LINEAR_UCP,
        SUBLINEAR_UCP,
        VANISHING_ORDER,
        BASELINE,
    ];

    pub fn is_registered(a: &str) -> bool {
        ALL.contains(&a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: String,
    pub measured: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
    /// Quantities to archive in the baseline store, with their drift tolerance
    /// (relative).
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub baselines: BTreeMap<String, f64>,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, anchor: &str, verdict: Verdict) -> Self {
        CheckRecord {
            name: name.into(),
            anchor: anchor.to_string(),
            measured: BTreeMap::new(),
            tolerance: None,
            verdict,
            note: None,
            baselines: BTreeMap::new(),
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.measured.insert(key.to_string(), v);
        self
    }

    pub fn tol(mut self, t: f64) -> Self {
        self.tolerance = Some(t);
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.note = Some(n.into());
        self
    }

    /// Marks measured quantity `key` for the baseline store.
    pub fn archive(mut self, key: &str, rel_tol: f64) -> Self {
        self.baselines.insert(key.to_string(), rel_tol);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub records: Vec<CheckRecord>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: CheckRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.records.extend(other.records);
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| r.verdict == Verdict::Fail)
    }

    pub fn all_passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn get(&self, name: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn orphan_anchors(&self) -> Vec<String> {
        self.records.iter().filter(|r| !anchors::is_registered(&r.anchor)).map(|r| r.anchor.clone()).collect()
    }
}
