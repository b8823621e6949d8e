//! Regression store for archived quantities. The first run writes every
//! archived value; later runs compare against it and append new keys.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use grushin_core::report::{anchors, CheckRecord, Verdict, VerificationReport};

pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub value: f64,
    pub rel_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineStore {
    pub version: u32,
    /// Keyed by `record name::quantity`.
    pub entries: BTreeMap<String, Entry>,
}

impl Default for BaselineStore {
    fn default() -> Self {
        BaselineStore { version: STORE_VERSION, entries: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub created: bool,
    pub compared: usize,
    pub added: usize,
    pub drifted: usize,
}

impl BaselineStore {
    /// Missing file gives an empty store; anything unreadable is an error.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading baseline store {}", path.display()))?;
        let store: BaselineStore = serde_json::from_str(&text).with_context(|| format!("corrupt baseline store {}", path.display()))?;
        if store.version != STORE_VERSION {
            bail!("baseline store {} has version {}, expected {STORE_VERSION}", path.display(), store.version);
        }
        if store.entries.values().any(|e| !e.value.is_finite() || !(e.rel_tol >= 0.0)) {
            bail!("corrupt baseline store {}: non-finite entry", path.display());
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing baseline store {}", path.display()))
    }

    /// Compares every archived quantity of `report`, appends unseen ones, and
    /// returns one record per comparison.
    pub fn apply(&mut self, report: &VerificationReport) -> (BaselineSummary, VerificationReport) {
        let mut sum = BaselineSummary { created: self.entries.is_empty(), ..Default::default() };
        let mut out = VerificationReport::new();
        for rec in &report.records {
            for (key, &tol) in &rec.baselines {
                let Some(&value) = rec.measured.get(key) else { continue };
                if !value.is_finite() {
                    continue;
                }
                let id = format!("{}::{key}", rec.name);
                match self.entries.get(&id) {
                    None => {
                        self.entries.insert(id, Entry { value, rel_tol: tol });
                        sum.added += 1;
                    }
                    Some(e) => {
                        sum.compared += 1;
                        let drift = relative_drift(e.value, value);
                        let ok = drift <= e.rel_tol;
                        if !ok {
                            sum.drifted += 1;
                        }
                        out.push(
                            CheckRecord::new(format!("baseline/{}/{key}", rec.name), anchors::BASELINE, Verdict::from_bool(ok))
                                .value("stored", e.value)
                                .value("current", value)
                                .value("relative_drift", drift)
                                .tol(e.rel_tol),
                        );
                    }
                }
            }
        }
        (sum, out)
    }
}

pub fn relative_drift(stored: f64, current: f64) -> f64 {
    if stored == current {
        return 0.0;
    }
    (current - stored).abs() / stored.abs().max(current.abs()).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: f64) -> VerificationReport {
        let mut r = VerificationReport::new();
        r.push(CheckRecord::new("x/y", anchors::QUADRATURE, Verdict::Pass).value("c", v).archive("c", 0.05));
        r
    }

    #[test]
    fn first_run_populates_then_compares() {
        let mut s = BaselineStore::default();
        let (a, recs) = s.apply(&report(1.0));
        assert!(a.created && a.added == 1 && recs.records.is_empty());
        let (b, recs) = s.apply(&report(1.0));
        assert_eq!((b.compared, b.drifted), (1, 0));
        assert!(recs.all_passed());
        let (c, recs) = s.apply(&report(1.2));
        assert_eq!(c.drifted, 1);
        assert!(!recs.all_passed());
    }

    #[test]
    fn corrupt_store_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.json");
        std::fs::write(&p, "{ not json").unwrap();
        assert!(BaselineStore::load(&p).is_err());
        assert!(BaselineStore::load(&dir.path().join("missing.json")).unwrap().entries.is_empty());
    }
}
