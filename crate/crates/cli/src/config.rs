//! Experiment configuration. TOML by default, JSON when the file ends in
//! `.json` or starts with `{`. Every table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use grushin_core::carleman::{default_templates, CarlemanCase, CarlemanKind, CarlemanQuad, PotentialSpec, DEFAULT_PARAMS};
use grushin_core::coefficients::{CoefficientField, ExampleFamily, Identity, SqrtViolation};
use grushin_core::operators::DegenerateOperator;
use grushin_core::quadrature::{AnnulusDomain, QuadratureGrid};
use grushin_core::sampling::SampleSpec;
use grushin_core::ucp::{FdGrid, FixedPointOptions};
use grushin_core::GrushinSpace;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config schema violation: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema(msg: impl std::fmt::Display) -> SchemaError {
    SchemaError(msg.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub expectations: Expectations,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carleman: Option<CarlemanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucp: Option<UcpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
}

fn one() -> u64 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 1,
            space: SpaceConfig::default(),
            coefficients: CoefficientConfig::default(),
            expectations: Expectations::default(),
            verify: None,
            carleman: None,
            ucp: None,
            baseline: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub m: usize,
    pub k: usize,
    pub gamma: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig { m: 1, k: 1, gamma: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    Identity,
    /// `a_11 = 1 + rho f`, `a_12 = |z|^{gamma+1} g`, `a_22 = 1 + |z|^{gamma+1} h`.
    Example {
        #[serde(default = "tenth")]
        f: f64,
        #[serde(default = "tenth")]
        g: f64,
        #[serde(default = "tenth")]
        h: f64,
    },
    /// `b_11 = c sqrt(rho)`: violates the structural hypothesis near 0.
    SqrtViolation { c: f64, big_lambda: f64 },
}

fn tenth() -> f64 {
    0.1
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig::Example { f: 0.1, g: 0.1, h: 0.1 }
    }
}

impl CoefficientConfig {
    pub fn field(&self) -> Arc<dyn CoefficientField> {
        match *self {
            CoefficientConfig::Identity => Arc::new(Identity),
            CoefficientConfig::Example { f, g, h } => Arc::new(ExampleFamily::new(f, g, h)),
            CoefficientConfig::SqrtViolation { c, big_lambda } => Arc::new(SqrtViolation { c, big_lambda }),
        }
    }
}

/// Record-name prefixes whose failure is expected. A listed prefix that
/// matches no failing record is itself a failure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default)]
    pub fail: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifySuite {
    Ladder,
    Identities,
    Bounds,
    Hypothesis,
    Rellich,
    Scaling,
}

impl VerifySuite {
    pub const ALL: [VerifySuite; 6] =
        [VerifySuite::Ladder, VerifySuite::Identities, VerifySuite::Bounds, VerifySuite::Hypothesis, VerifySuite::Rellich, VerifySuite::Scaling];

    pub fn label(&self) -> &'static str {
        match self {
            VerifySuite::Ladder => "ladder",
            VerifySuite::Identities => "identities",
            VerifySuite::Bounds => "bounds",
            VerifySuite::Hypothesis => "hypothesis",
            VerifySuite::Rellich => "rellich",
            VerifySuite::Scaling => "scaling",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub suites: Vec<VerifySuite>,
    /// Points per space in the derivative ladder.
    pub ladder_points: usize,
    /// Run the ladder on the 3x3 `(gamma, (m, k))` matrix instead of `space` only.
    pub ladder_matrix: bool,
    pub identity_points: usize,
    /// Cloud for the bound suite (doubled internally) and the hypothesis check.
    pub samples: SampleSpec,
    pub rellich_cells: Vec<usize>,
    pub scaling_radii: Vec<f64>,
    /// Homogeneity degrees `s` of `u = rho^s` in the scaling check.
    pub scaling_degrees: Vec<f64>,
    pub quadrature: QuadratureGrid,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            suites: VerifySuite::ALL.to_vec(),
            ladder_points: 200,
            ladder_matrix: true,
            identity_points: 100,
            samples: SampleSpec::new(10_000),
            rellich_cells: vec![32, 64, 128, 256],
            scaling_radii: vec![1.0, 0.5, 0.25],
            scaling_degrees: vec![0.0, 1.0],
            quadrature: QuadratureGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub estimates: Vec<CarlemanKind>,
    pub radius: f64,
    pub epsilon: f64,
    /// `K` of the C1 potential used by `df`.
    pub df_k: f64,
    /// `f(s) = c |s|^{q-2} s` used by `f10`.
    pub f10_c: f64,
    pub f10_q: f64,
    pub params: Vec<f64>,
    /// Parameters at which the substituted path is also evaluated.
    pub substitution_params: Vec<f64>,
    pub quadrature: CarlemanQuad,
    /// Archived constants: `LHS <= C RHS` is checked at every evaluation.
    pub constants: BTreeMap<CarlemanKind, f64>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig {
            estimates: CarlemanKind::ALL.to_vec(),
            radius: 0.5,
            epsilon: 0.5,
            df_k: 10.0,
            f10_c: 1.0,
            f10_q: 1.5,
            params: DEFAULT_PARAMS.to_vec(),
            substitution_params: vec![40.0, 160.0],
            quadrature: CarlemanQuad::default(),
            constants: BTreeMap::new(),
        }
    }
}

impl CarlemanConfig {
    pub fn templates(&self) -> Vec<CarlemanCase> {
        default_templates(self.radius)
            .into_iter()
            .filter(|t| self.estimates.contains(&t.kind))
            .map(|mut t| {
                t.epsilon = self.epsilon;
                t.param = self.params.first().copied().unwrap_or(t.param);
                match t.kind {
                    CarlemanKind::Df => t.potential = PotentialSpec::C1 { k: self.df_k },
                    CarlemanKind::F10 => t.potential = PotentialSpec::sublinear(self.f10_c, self.f10_q),
                    _ => {}
                }
                t
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UcpConfig {
    pub r_in: f64,
    pub r_out: f64,
    /// Cells per z axis of the reproduction grids.
    pub grids: Vec<usize>,
    pub tol: f64,
    pub ks: Vec<f64>,
    pub k_cells: usize,
    pub radii: Vec<f64>,
    /// Frequency of the oscillatory boundary data of the K sweep.
    pub frequency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sublinear: Option<SublinearConfig>,
}

impl Default for UcpConfig {
    fn default() -> Self {
        UcpConfig {
            r_in: 0.25,
            r_out: 1.0,
            grids: vec![32, 64, 128],
            tol: 1e-12,
            ks: vec![1.0, 10.0, 100.0, 1000.0],
            k_cells: 64,
            radii: vec![0.5, 0.35, 0.25, 0.18],
            frequency: 3.0,
            sublinear: Some(SublinearConfig::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SublinearConfig {
    pub c: f64,
    pub q: f64,
    pub cells: usize,
    pub fixed_point: FixedPointOptions,
}

impl Default for SublinearConfig {
    fn default() -> Self {
        SublinearConfig { c: 0.5, q: 1.5, cells: 64, fixed_point: FixedPointOptions::new(1e-10) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Store location; relative paths resolve against the config file.
    pub path: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self, SchemaError> {
        let cfg: ExperimentConfig = if json { serde_json::from_str(text).map_err(schema)? } else { toml::from_str(text).map_err(schema)? };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        Self::parse(&text, json)
    }

    pub fn space(&self) -> Result<GrushinSpace, SchemaError> {
        GrushinSpace::new(self.space.m, self.space.k, self.space.gamma).map_err(schema)
    }

    pub fn operator(&self) -> Result<DegenerateOperator, SchemaError> {
        Ok(DegenerateOperator::new(self.space()?, self.coefficients.field()))
    }

    /// Semantic checks beyond the shape enforced by deserialization.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(schema(format!("schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})", self.schema_version)));
        }
        self.space()?;
        match self.coefficients {
            CoefficientConfig::Example { f, g, h } if [f, g, h].iter().any(|x| !x.is_finite()) => return Err(schema("non-finite coefficient parameter")),
            CoefficientConfig::SqrtViolation { c, big_lambda } if !(c.is_finite() && big_lambda > 0.0) => {
                return Err(schema("sqrt_violation needs finite c and big_lambda > 0"))
            }
            _ => {}
        }
        if let Some(v) = &self.verify {
            v.samples.validate().map_err(schema)?;
            v.quadrature.validate().map_err(schema)?;
            if v.ladder_points == 0 || v.identity_points == 0 || v.samples.count == 0 {
                return Err(schema("verify point counts must be positive"));
            }
            if v.rellich_cells.len() < 2 || v.rellich_cells.iter().any(|n| *n < 2) {
                return Err(schema("rellich_cells needs at least two grids of 2 or more cells"));
            }
            if v.scaling_radii.len() < 2 || v.scaling_radii.iter().any(|r| !(*r > 0.0)) {
                return Err(schema("scaling_radii needs at least two positive radii"));
            }
        }
        if let Some(c) = &self.carleman {
            if c.params.is_empty() || c.estimates.is_empty() {
                return Err(schema("carleman needs at least one estimate and one parameter"));
            }
            c.quadrature.polar.validate().map_err(schema)?;
            c.quadrature.boxed.validate().map_err(schema)?;
            for t in c.templates() {
                for &a in &c.params {
                    t.with_param(a).validate().map_err(schema)?;
                }
            }
            if c.constants.values().any(|v| !(*v > 0.0)) {
                return Err(schema("archived constants must be positive"));
            }
        }
        if let Some(u) = &self.ucp {
            AnnulusDomain::new(u.r_in, u.r_out).map_err(schema)?;
            for &n in u.grids.iter().chain(std::iter::once(&u.k_cells)) {
                FdGrid::new(n).validate().map_err(schema)?;
            }
            if u.grids.is_empty() || !(u.tol > 0.0) {
                return Err(schema("ucp needs at least one grid and tol > 0"));
            }
            if u.ks.len() < 3 || u.ks.iter().any(|k| !(*k > 0.0)) {
                return Err(schema("ucp.ks needs at least three positive values"));
            }
            if u.radii.len() < 2 || u.radii.windows(2).any(|w| !(w[1] < w[0])) || u.radii[0] > 1.0 {
                return Err(schema("ucp.radii must be strictly decreasing within (0, 1]"));
            }
            if let Some(s) = &u.sublinear {
                PotentialSpec::sublinear(s.c, s.q).validate().map_err(schema)?;
                FdGrid::new(s.cells).validate().map_err(schema)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml() {
        let c = ExperimentConfig::parse("schema_version = 1\n[verify]\nladder_points = 5\n", false).unwrap();
        assert_eq!(c.verify.unwrap().ladder_points, 5);
        assert_eq!(c.seed, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse("schema_version = 1\nsead = 3\n", false).is_err());
        assert!(ExperimentConfig::parse("schema_version = 1\n[verify]\nladder_pionts = 5\n", false).is_err());
        assert!(ExperimentConfig::parse(r#"{"schema_version": 1, "ucp": {"tol": 1e-9, "extra": 1}}"#, true).is_err());
    }

    #[test]
    fn semantic_errors() {
        assert!(ExperimentConfig::parse("schema_version = 2\n", false).is_err());
        assert!(ExperimentConfig::parse("schema_version = 1\n[space]\nm = 1\nk = 1\ngamma = -1.0\n", false).is_err());
        assert!(ExperimentConfig::parse("schema_version = 1\n[carleman]\nepsilon = 1.5\n", false).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig { carleman: Some(CarlemanConfig::default()), ..Default::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&s, true).unwrap(), c);
    }
}
