//! End-to-end runs through the library entry point and the binary.

use std::path::Path;
use std::process::Command;

use ldlab::{run, ConfigError, ExperimentConfig, Pool, Status};

const IID_RATIO: &str = r#"
kind = "ratio"
seed = 11
reps = 4000
n_grid = [50]

[model]
type = "iid"
noise = { law = "pareto", alpha = 1.5, p = 0.75, q = 0.25 }

[x_grid]
policy = "multiples"
factors = [1.0, 2.0, 4.0]
"#;

const AR1_CONSTANTS: &str = r#"
kind = "constants"
seed = 3

[model]
type = "ar1"
phi = 0.5
noise = { law = "pareto", alpha = 1.5, p = 1.0, q = 0.0 }
"#;

const AR1_REGEN: &str = r#"
kind = "regen"
seed = 5
reps = 2000
n_grid = [100]

[model]
type = "ar1"
phi = 0.5
noise = { law = "smoothed_pareto", alpha = 1.5, p = 0.5, q = 0.5 }

[regen]
pi_steps = 20000
"#;

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldlab"))
}

/// CSV body with the `#` header lines removed.
fn body(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn unbalanced_tail_is_a_schema_error() {
    let text = IID_RATIO.replace("q = 0.25", "q = 0.3");
    let cfg = parse(&text);
    match run(&cfg, 1, &ldlab_core::Serial) {
        Err(ConfigError::Invalid(v)) => {
            assert!(v.iter().any(|m| m.starts_with("model:") && m.contains("p + q")), "{v:?}");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let text = IID_RATIO.replace("seed = 11", "seed = 11\nsed = 3");
    assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Parse(_))));
}

#[test]
fn json_and_toml_agree() {
    let cfg = parse(IID_RATIO);
    let again = ExperimentConfig::parse(&cfg.to_json()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
}

#[test]
fn bodies_do_not_depend_on_workers() {
    for text in [IID_RATIO, AR1_REGEN] {
        let cfg = parse(text);
        let one = run(&cfg, 1, &Pool::new(1).unwrap()).unwrap();
        let many = run(&cfg, 8, &Pool::new(8).unwrap()).unwrap();
        // NaN fields make `==` useless here; compare the serialized form.
        let json = |b: &ldlab::ReportBundle| serde_json::to_string(&b.summary).unwrap();
        assert_eq!(json(&one), json(&many));
        assert_eq!(one.tables.len(), many.tables.len());
        for (a, b) in one.tables.iter().zip(&many.tables) {
            assert_eq!(a.body().unwrap(), b.body().unwrap(), "{}", a.name);
        }
        let serial = run(&cfg, 1, &ldlab_core::Serial).unwrap();
        for (a, b) in serial.tables.iter().zip(&one.tables) {
            assert_eq!(a.body().unwrap(), b.body().unwrap(), "{}", a.name);
        }
    }
}

#[test]
fn closed_form_constant_has_zero_halfwidth() {
    let b = run(&parse(AR1_CONSTANTS), 1, &ldlab_core::Serial).unwrap();
    assert_eq!(b.summary.status, Status::Pass, "{:?}", b.summary);
    let c = b.summary.constants.iter().find(|c| c.name == "b_plus").unwrap();
    assert_eq!(c.method, "closed_form");
    assert_eq!(c.ci_halfwidth, 0.0);
    assert!((c.value - (2f64.powf(1.5) - 1.0)).abs() < 1e-12);
}

#[test]
fn regen_run_reports_identities() {
    let b = run(&parse(AR1_REGEN), 1, &ldlab_core::Serial).unwrap();
    assert!(b.summary.errors.is_empty(), "{:?}", b.summary.errors);
    for name in ["consistency_identity", "remainder_bound", "cycle_reconstruction"] {
        let c = b.summary.checks.iter().find(|c| c.name == name).unwrap();
        assert!(c.pass, "{c:?}");
    }
    for t in ["regen", "tau_tail", "cycle_lengths", "cycle_tail", "constants"] {
        assert!(b.table(t).is_some(), "missing table {t}");
    }
}

#[test]
fn bundle_files_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse(IID_RATIO);
    let b = run(&cfg, 2, &Pool::new(2).unwrap()).unwrap();
    b.write(dir.path()).unwrap();
    let ratio = std::fs::read_to_string(dir.path().join("ratio.csv")).unwrap();
    let mut lines = ratio.lines();
    assert!(lines.next().unwrap().starts_with("# ldlab "));
    assert_eq!(lines.next().unwrap(), "# seed = 11");
    assert_eq!(lines.next().unwrap(), "# workers = 2");
    assert_eq!(lines.next().unwrap(), format!("# config_hash = {}", cfg.hash()));
    assert_eq!(lines.next().unwrap(), ldlab::report::RATIO_COLUMNS.join(","));
    assert!(!ratio.contains('\r'));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], cfg.hash());
    assert!(summary.get("workers").is_none());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["workers"], 2);
    let stored = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(stored.hash(), cfg.hash());
}

#[test]
fn binary_list_models() {
    let out = bin().arg("list-models").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    assert_eq!(names, ["iid", "ma", "ar1", "sre_affine", "sre_max", "letac", "sv", "garch11"]);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, AR1_CONSTANTS).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, AR1_CONSTANTS.replace("phi = 0.5", "phi = 1.5")).unwrap();

    let ok = bin().args(["validate-config", "--config"]).arg(&good).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let invalid = bin().args(["validate-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("model:"));

    let out = dir.path().join("out");
    let r = bin().args(["run", "--workers", "1", "--config"]).arg(&good).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(out.join("summary.json").exists());
    assert!(out.join("manifest.json").exists());

    // A ratio run far outside the asymptotic regime fails its checks.
    let failing = dir.path().join("failing.toml");
    std::fs::write(&failing, IID_RATIO.replace("reps = 4000", "reps = 20000")).unwrap();
    let r = bin().args(["run", "--workers", "1", "--config"]).arg(&failing).arg("--out").arg(dir.path().join("f")).output().unwrap();
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stdout));
}

#[test]
fn binary_outputs_match_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, IID_RATIO).unwrap();
    for w in ["1", "3"] {
        let r = bin().args(["run", "--workers", w, "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(w)).output().unwrap();
        assert!(r.status.code().is_some_and(|c| c != 1), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["ratio.csv", "constants.csv"] {
        assert_eq!(body(&dir.path().join("1").join(f)), body(&dir.path().join("3").join(f)));
    }
    let s1 = std::fs::read(dir.path().join("1/summary.json")).unwrap();
    let s3 = std::fs::read(dir.path().join("3/summary.json")).unwrap();
    assert_eq!(s1, s3);
}
