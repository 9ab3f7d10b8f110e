use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("x = {x} is below the asymptotic regime threshold {threshold}; calibrate with larger x")]
    BelowRegime { x: f64, threshold: f64 },
    #[error("alpha = {alpha} is an excluded boundary for region rule {rule}")]
    UnsupportedBoundary { alpha: f64, rule: &'static str },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no plateau: relative drift {drift:.3} across the stable segment (ratios {ratios:?})")]
    NoPlateau { ratios: Vec<f64>, drift: f64 },
    #[error("differencing did not stabilize by k = 32; trace (k, diff, ci) = {trace:?}")]
    Unstable { trace: Vec<(usize, f64, f64)> },
    #[error("series cap hit in {capped} of {reps} replications")]
    Truncation { capped: usize, reps: usize },
    #[error("ill-posed estimate: {0}")]
    IllPosed(String),
    #[error("power precheck removed every x for n = {n}")]
    EmptyRows { n: usize },
    #[error("conditioning acceptance {acceptance:e} at x = {x} is below 1e-5; use smaller x")]
    Infeasible { x: f64, acceptance: f64 },
    #[error("minorization epsilon {epsilon:e} is below 1e-3; shrink the small set or widen the grid")]
    WeakMinorization { epsilon: f64 },
    #[error("insufficient power: {0}")]
    Power(String),
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        input(alloc::format!("{name} must be finite, got {v}"))
    }
}
