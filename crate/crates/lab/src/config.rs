//! Experiment configuration: TOML (default) or JSON.

use std::path::{Path, PathBuf};

use ldlab_core::ldp::{Schedules, XGrid};
use ldlab_core::regen::{SmallSet, GRID_CELLS};
use ldlab_core::theory::{RegionParams, RegionRule};
use ldlab_core::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Ratio,
    Conditions,
    Regen,
    Constants,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Ratio => "ratio",
            Kind::Conditions => "conditions",
            Kind::Regen => "regen",
            Kind::Constants => "constants",
        }
    }
}

/// Pass/fail tolerances of the ratio and constant checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    /// Absolute floor of `|ratio - b₊|`.
    pub floor: f64,
    /// Multiples of the 95% half-width allowed beyond the floor.
    pub widths: f64,
    /// Multiples of the joint half-width for two estimates of one constant.
    pub agreement_widths: f64,
    /// Band for the cycle-ratio plateau over `Ê τ_A b₊`.
    pub cycle_band: [f64; 2],
}

impl Default for Checks {
    fn default() -> Self {
        Checks { floor: 0.05, widths: 3.0, agreement_widths: 1.0, cycle_band: [0.85, 1.15] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsConfig {
    pub k_grid: Vec<usize>,
    pub n: usize,
    /// Empty: `x_s n^{1/α + δ} · {1, 2, 4}`.
    pub x_grid: Vec<f64>,
    /// Drift exponents; `[α/2]` when empty. Ignored for non-Markov models.
    pub drift_p: Vec<f64>,
    pub probe_reps: usize,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig { k_grid: vec![2, 4, 8], n: 200, x_grid: Vec::new(), drift_p: Vec::new(), probe_reps: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegenConfig {
    /// Chosen from a pilot run when absent.
    pub small_set: Option<SmallSet>,
    pub grid_cells: usize,
    pub pi_steps: usize,
    /// Empty: `x_s n^{1/α + δ} · {1, 2, 4, 8}` at the largest `n`.
    pub x_grid: Vec<f64>,
}

impl Default for RegenConfig {
    fn default() -> Self {
        RegenConfig { small_set: None, grid_cells: GRID_CELLS, pi_steps: 1_000_000, x_grid: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub series_reps: usize,
    pub mean_reps: usize,
    pub diff_reps: usize,
    /// Cross-check Monte Carlo constants by differencing.
    pub differencing: bool,
    /// Differencing grid; `x_s · {30, ..., 300}` when empty.
    pub x_grid: Vec<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig { series_reps: 200_000, mean_reps: 200_000, diff_reps: 200_000, differencing: false, x_grid: Vec::new() }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_reps() -> usize {
    100_000
}
fn default_n_grid() -> Vec<usize> {
    vec![1000]
}
fn default_true() -> bool {
    true
}
fn default_min_hits() -> f64 {
    50.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: ModelSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub x_grid: XGrid,
    #[serde(default)]
    pub rule: Option<RegionRule>,
    #[serde(default)]
    pub region: RegionParams,
    #[serde(default = "default_true")]
    pub auto_scale: bool,
    #[serde(default = "default_min_hits")]
    pub min_hits: f64,
    #[serde(default)]
    pub schedules: Schedules,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    #[serde(default)]
    pub regen: RegenConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ExperimentConfig {
    pub fn new(kind: Kind, model: ModelSpec) -> Self {
        ExperimentConfig {
            kind,
            model,
            seed: default_seed(),
            workers: None,
            out: None,
            reps: default_reps(),
            n_grid: default_n_grid(),
            x_grid: XGrid::default(),
            rule: None,
            region: RegionParams::default(),
            auto_scale: true,
            min_hits: default_min_hits(),
            schedules: Schedules::default(),
            checks: Checks::default(),
            conditions: ConditionsConfig::default(),
            regen: RegenConfig::default(),
            constants: ConstantsConfig::default(),
        }
    }

    /// JSON if the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Parse and validate in one step.
    pub fn load_valid(path: &Path) -> Result<Self, ConfigError> {
        let c = Self::load(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated invariant, prefixed by the offending field.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.model.violations().into_iter().map(|m| format!("model: {m}")).collect();
        if self.reps == 0 {
            v.push("reps: must be positive".into());
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            v.push("n_grid: must be non-empty with positive entries".into());
        }
        if self.workers == Some(0) {
            v.push("workers: must be positive".into());
        }
        match &self.x_grid {
            XGrid::Span { points } if *points == 0 => v.push("x_grid.points: must be positive".into()),
            XGrid::Multiples { factors } if factors.is_empty() || factors.iter().any(|f| !(*f > 0.0)) => {
                v.push("x_grid.factors: must be non-empty and positive".into())
            }
            XGrid::Explicit { values } if values.is_empty() || values.iter().any(|f| !(f.is_finite() && *f > 0.0)) => {
                v.push("x_grid.values: must be non-empty, positive and finite".into())
            }
            _ => {}
        }
        v.extend(self.region.violations().into_iter().map(|m| format!("region: {m}")));
        if !(self.min_hits >= 0.0) {
            v.push("min_hits: must be nonnegative".into());
        }
        v.extend(self.schedules.violations(&self.conditions.k_grid).into_iter().map(|m| format!("schedules: {m}")));
        let c = &self.checks;
        if !(c.floor >= 0.0) || !(c.widths > 0.0) || !(c.agreement_widths > 0.0) {
            v.push("checks: floor must be nonnegative and widths positive".into());
        }
        if !(c.cycle_band[0] < c.cycle_band[1]) {
            v.push("checks.cycle_band: lower end must be below the upper end".into());
        }
        let k = &self.conditions;
        if k.k_grid.is_empty() || k.k_grid.windows(2).any(|w| w[1] <= w[0]) {
            v.push("conditions.k_grid: must be non-empty and increasing".into());
        }
        if k.n < 2 {
            v.push("conditions.n: must be at least 2".into());
        }
        if k.x_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            v.push("conditions.x_grid: entries must be positive and finite".into());
        }
        if k.drift_p.iter().any(|p| !(*p > 0.0)) {
            v.push("conditions.drift_p: entries must be positive".into());
        }
        if k.probe_reps < 32 {
            v.push("conditions.probe_reps: must be at least 32".into());
        }
        let r = &self.regen;
        if let Some(s) = r.small_set {
            if !(s.lo.is_finite() && s.hi.is_finite() && s.lo < s.hi) {
                v.push("regen.small_set: must be a finite interval with lo < hi".into());
            }
        }
        if r.grid_cells < 16 {
            v.push("regen.grid_cells: must be at least 16".into());
        }
        if r.pi_steps < 32 {
            v.push("regen.pi_steps: must be at least 32".into());
        }
        if r.x_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            v.push("regen.x_grid: entries must be positive and finite".into());
        }
        let s = &self.constants;
        if s.series_reps < 32 || s.mean_reps < 32 || s.diff_reps < 32 {
            v.push("constants: replication counts must be at least 32".into());
        }
        if s.x_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            v.push("constants.x_grid: entries must be positive and finite".into());
        }
        let heavy = self.model.alpha().is_some();
        if !heavy && self.kind != Kind::Constants {
            v.push("model: light-tailed noise has no tail index; only kind = \"constants\" applies".into());
        }
        if self.kind == Kind::Regen && matches!(self.model.variant, ldlab_core::Variant::Ma { .. }) {
            v.push("kind: regen needs a Markov chain; moving averages are not Markov in X".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// SHA-256 of the canonical JSON of every field that affects results
    /// (all but `out` and `workers`), defaults filled in.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
            map.remove("workers");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldlab_core::{NoiseLaw, TailSpec, Variant};

    fn cfg() -> ExperimentConfig {
        let noise = NoiseLaw::Pareto(TailSpec::pareto(1.5, 0.75).unwrap());
        ExperimentConfig::new(Kind::Ratio, Variant::Iid { noise }.into())
    }

    #[test]
    fn round_trips_through_both_encodings() {
        let mut c = cfg();
        c.x_grid = XGrid::Multiples { factors: vec![1.0, 2.0, 4.0] };
        c.regen.small_set = Some(SmallSet::symmetric(0.75));
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(ExperimentConfig::parse(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn minimal_toml_fills_defaults() {
        let text = "kind = \"ratio\"\n[model]\ntype = \"iid\"\nnoise = { law = \"pareto\", alpha = 1.5, p = 0.75, q = 0.25 }\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c, cfg());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn violations_name_fields() {
        let text = "kind = \"ratio\"\nreps = 0\n[model]\ntype = \"iid\"\nnoise = { law = \"pareto\", alpha = 1.5, p = 0.7, q = 0.4 }\n[region]\ndelta = -1.0\n";
        let c = ExperimentConfig::parse(text).unwrap();
        let v = c.violations();
        assert!(v.iter().any(|m| m.starts_with("model:") && m.contains("p + q")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("reps:")));
        assert!(v.iter().any(|m| m.starts_with("region:")));
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("p + q") && err.contains("reps"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = "kind = \"ratio\"\nrepz = 3\n[model]\ntype = \"iid\"\nnoise = { law = \"gaussian\", sd = 1.0 }\n";
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn hash_tracks_meaningful_fields_only() {
        let a = cfg();
        let mut b = a.clone();
        b.workers = Some(8);
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 2;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.region.delta = 0.11;
        assert_ne!(a.hash(), d.hash());
        // Spelling defaults out does not change the hash.
        let text = "kind = \"ratio\"\nseed = 1\nreps = 100000\n[model]\ntype = \"iid\"\nnoise = { law = \"pareto\", alpha = 1.5, p = 0.75, q = 0.25 }\n";
        assert_eq!(ExperimentConfig::parse(text).unwrap().hash(), a.hash());
    }

    #[test]
    fn schedules_are_enforced() {
        let mut c = cfg();
        c.schedules.delta = ldlab_core::ldp::Schedule::Power { c: 1.0, exponent: 1.5 };
        assert!(c.violations().iter().any(|m| m.starts_with("schedules:")));
    }
}
