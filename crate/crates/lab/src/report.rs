//! Report bundle: CSV tables, summary JSON and manifest.
//!
//! CSV files start with `#` comment lines (tool version, seed, workers,
//! config hash) followed by a header row and the body. Bodies depend only
//! on the config, never on the worker count. Column orders are frozen; see
//! the `*_COLUMNS` constants.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RATIO_COLUMNS: &[&str] = &[
    "n", "x", "x_over_bn", "side", "in_region", "hits", "reps", "denom", "denom_band", "ratio", "ci_lo", "ci_hi",
    "b_ref", "b_ref_halfwidth",
];
pub const CONDITION_COLUMNS: &[&str] = &["tag", "k", "p", "statistic", "threshold", "pass", "bound"];
pub const TRACE_COLUMNS: &[&str] = &["tag", "k", "p", "x", "value", "count", "trials"];
pub const REGEN_COLUMNS: &[&str] = &[
    "n", "x", "cycle_ratio", "cycle_se", "cycle_hits", "cycle_ref", "int_ratio", "int_ref", "direct_ratio",
    "direct_hits", "remainder", "remainder_bound",
];
pub const CYCLE_LENGTH_COLUMNS: &[&str] = &["length", "count"];
pub const CYCLE_TAIL_COLUMNS: &[&str] = &["x", "hits", "cycles", "prob"];
pub const TAU_COLUMNS: &[&str] = &["n", "prob", "upper", "hits", "reps"];
pub const CONSTANT_COLUMNS: &[&str] = &["name", "value", "ci_halfwidth", "method"];
pub const DIFF_COLUMNS: &[&str] = &["k", "value", "ci_halfwidth"];

/// Shortest round-trip float text; `inf`, `-inf`, `NaN` for non-finite.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &'static [&'static str]) -> Self {
        Table { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "{}", self.name);
        self.rows.push(row);
    }

    /// Header row and body, LF line endings.
    pub fn body(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedConstant {
    pub name: String,
    pub value: f64,
    pub ci_halfwidth: f64,
    pub method: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    ConditionFailure,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Error => 1,
            Status::ConditionFailure => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub kind: String,
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: Status,
    pub constants: Vec<NamedConstant>,
    pub checks: Vec<Check>,
    /// Grid maxima of `|ratio - b_ref|` keyed by `<side>_n<n>`.
    pub grid_max_deviation: BTreeMap<String, f64>,
    /// Kind-specific structured values (regions, small set, Kac quantities).
    pub details: serde_json::Value,
    pub notes: Vec<String>,
    pub errors: Vec<String>,
}

impl Summary {
    pub fn status_from_checks(&self) -> Status {
        if !self.errors.is_empty() {
            Status::Error
        } else if self.checks.iter().all(|c| c.pass) {
            Status::Pass
        } else {
            Status::ConditionFailure
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub summary: Summary,
    pub tables: Vec<Table>,
    pub workers: usize,
    /// The config as run, stored next to the outputs.
    pub config_toml: String,
}

impl ReportBundle {
    pub fn exit_code(&self) -> i32 {
        self.summary.status.exit_code()
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Write every table, `summary.json`, `manifest.json` and
    /// `config.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "# ldlab {VERSION}")?;
            writeln!(f, "# seed = {}", self.summary.seed)?;
            writeln!(f, "# workers = {}", self.workers)?;
            writeln!(f, "# config_hash = {}", self.summary.config_hash)?;
            f.write_all(&t.body()?)?;
            f.flush()?;
            written.push(path);
        }
        let summary = dir.join("summary.json");
        std::fs::write(&summary, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        written.push(summary);
        let config = dir.join("config.toml");
        std::fs::write(&config, &self.config_toml)?;
        written.push(config);
        let manifest = Manifest {
            tool: "ldlab".into(),
            version: VERSION.into(),
            config_hash: self.summary.config_hash.clone(),
            seed: self.summary.seed,
            workers: self.workers,
            files: written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
        };
        let mpath = dir.join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")?;
        written.push(mpath);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.7, 1.0, 1e-300, 123456789.125, -2.5e17] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn body_uses_lf_and_header() {
        let mut t = Table::new("t", DIFF_COLUMNS);
        t.push(vec!["2".into(), num(0.5), num(0.01)]);
        let b = String::from_utf8(t.body().unwrap()).unwrap();
        assert_eq!(b, "k,value,ci_halfwidth\n2,0.5,0.01\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Status::Pass.exit_code(), 0);
        assert_eq!(Status::Error.exit_code(), 1);
        assert_eq!(Status::ConditionFailure.exit_code(), 2);
    }
}
