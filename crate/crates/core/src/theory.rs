//! Limit constants and validity regions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use libm::{exp, fabs, log, pow, sqrt};

use crate::error::{input, Error, Result};
use crate::exec::{block_count, block_range, collect_reps, Executor};
use crate::models::{ALaw, Chain, ModelSpec, Variant, SERIES_CAP, SERIES_TOL};
use crate::noise::NoiseLaw;
use crate::rng::{tag, StreamKey};
use crate::stats::{self, batch_means, ratio_of_means, weighted_line, Z95};

// ---------------------------------------------------------------------------
// Regions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RegionRule {
    NagaevIid,
    M0Dep,
    Sv,
    MarkovAtom,
    Sre,
    Garch,
}

impl RegionRule {
    pub fn name(self) -> &'static str {
        match self {
            RegionRule::NagaevIid => "nagaev_iid",
            RegionRule::M0Dep => "m0_dep",
            RegionRule::Sv => "sv",
            RegionRule::MarkovAtom => "markov_atom",
            RegionRule::Sre => "sre",
            RegionRule::Garch => "garch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "nagaev_iid" => RegionRule::NagaevIid,
            "m0_dep" => RegionRule::M0Dep,
            "sv" => RegionRule::Sv,
            "markov_atom" => RegionRule::MarkovAtom,
            "sre" => RegionRule::Sre,
            "garch" => RegionRule::Garch,
            _ => return None,
        })
    }

    pub fn for_model(model: &ModelSpec) -> Self {
        Self::parse(crate::models::default_rule_name(&model.variant)).unwrap()
    }
}

impl fmt::Display for RegionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// First-regeneration tail `P(τ_A > n)` fed to the Markov-atom rule.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TauBound {
    pub n: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RegionParams {
    /// Exponent slack in `n^{1/α + δ}`.
    pub delta: f64,
    /// Nagaev constant in `√(a n ln n)`; defaults to `α - 1`.
    pub a: Option<f64>,
    /// Rate in `c_n = e^{γ n}`.
    pub gamma: f64,
    /// `s_n = (ln n)^{s_exp}`.
    pub s_exp: f64,
    /// `x_s` with `P(|X| > x) ≈ (x / x_s)^{-α}`; regions are stated for
    /// `x_s = 1` and scaled by it.
    pub tail_scale: f64,
    /// Markov-atom rule: `n P(|X| > c_n) = margin · P(τ_A > n)`.
    pub tau_margin: f64,
    pub tau: Option<TauBound>,
}

impl Default for RegionParams {
    fn default() -> Self {
        RegionParams { delta: 0.1, a: None, gamma: 0.02, s_exp: 0.5, tail_scale: 1.0, tau_margin: 10.0, tau: None }
    }
}

impl RegionParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.delta.is_finite() && self.delta > 0.0) {
            v.push(format!("region delta must be positive, got {}", self.delta));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            v.push(format!("region gamma must be positive, got {}", self.gamma));
        }
        if !(self.s_exp.is_finite() && self.s_exp > 0.0) {
            v.push(format!("region s_exp must be positive, got {}", self.s_exp));
        }
        if !(self.tail_scale.is_finite() && self.tail_scale > 0.0) {
            v.push(format!("region tail_scale must be positive, got {}", self.tail_scale));
        }
        if !(self.tau_margin.is_finite() && self.tau_margin > 0.0) {
            v.push(format!("region tau_margin must be positive, got {}", self.tau_margin));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Region {
    pub n: usize,
    pub b_n: f64,
    /// `f64::INFINITY` when unbounded.
    pub c_n: f64,
    pub rule: RegionRule,
}

impl Region {
    pub fn contains(&self, x: f64) -> bool {
        x > self.b_n && x < self.c_n
    }
}

/// Validity region `Λ_n = (b_n, c_n)` under `rule`.
pub fn region(alpha: f64, n: usize, rule: RegionRule, params: &RegionParams) -> Result<Region> {
    let (b_n, c_n) = edges(alpha, n, rule, params, true)?;
    if !(b_n < c_n) {
        return Err(Error::Input(format!("empty region for n = {n}: b_n = {b_n} >= c_n = {c_n}")));
    }
    Ok(Region { n, b_n, c_n, rule })
}

/// `b_n` alone. Needs no `τ_A` estimate and succeeds where the region is
/// still empty at small `n`.
pub fn lower_edge(alpha: f64, n: usize, rule: RegionRule, params: &RegionParams) -> Result<f64> {
    edges(alpha, n, rule, params, false).map(|e| e.0)
}

fn edges(alpha: f64, n: usize, rule: RegionRule, params: &RegionParams, upper: bool) -> Result<(f64, f64)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return input(format!("alpha must be positive, got {alpha}"));
    }
    if n < 2 {
        return input("regions need n >= 2");
    }
    let v = params.violations();
    if !v.is_empty() {
        return Err(Error::Input(v.join("; ")));
    }
    let nf = n as f64;
    let ln_n = log(nf);
    let d = params.delta;
    let unsupported = || Err(Error::UnsupportedBoundary { alpha, rule: rule.name() });
    let power = |e: f64| pow(nf, e + d);
    let nagaev_a = || -> Result<f64> {
        let a = params.a.unwrap_or(alpha - 1.0);
        if !(a > alpha - 2.0) {
            return input(format!("Nagaev constant a = {a} must exceed alpha - 2 = {}", alpha - 2.0));
        }
        Ok(a)
    };
    let s_n = pow(ln_n, params.s_exp);
    let exp_gamma = exp(params.gamma * nf);
    let (b, c) = match rule {
        RegionRule::NagaevIid => {
            if alpha > 2.0 {
                (sqrt(nagaev_a()? * nf * ln_n), f64::INFINITY)
            } else {
                (power(1.0 / alpha), f64::INFINITY)
            }
        }
        RegionRule::M0Dep => (power((1.0 / alpha).max(0.5)), f64::INFINITY),
        RegionRule::Sv => {
            if alpha == 1.0 || alpha == 2.0 {
                return unsupported();
            }
            if alpha > 2.0 {
                (sqrt(nf * ln_n) * s_n, f64::INFINITY)
            } else {
                (power(1.0 / alpha), f64::INFINITY)
            }
        }
        RegionRule::Sre => {
            if alpha == 1.0 || alpha == 2.0 {
                return unsupported();
            }
            if alpha < 1.0 {
                (power(1.0 / alpha), f64::INFINITY)
            } else {
                (power((1.0 / alpha).max(0.5)), exp_gamma)
            }
        }
        RegionRule::Garch => {
            if alpha == 2.0 {
                return unsupported();
            }
            if alpha < 2.0 {
                (power(1.0 / alpha), f64::INFINITY)
            } else {
                (sqrt(nf * ln_n) * s_n, exp_gamma)
            }
        }
        RegionRule::MarkovAtom => {
            if alpha == 1.0 || alpha == 2.0 {
                return unsupported();
            }
            if alpha < 1.0 {
                (power(1.0 / alpha), f64::INFINITY)
            } else {
                let b = power((1.0 / alpha).max(0.5));
                let tau = match params.tau {
                    Some(t) => t,
                    None if !upper => TauBound { n, prob: 0.0 },
                    None => return input("markov_atom regions need a P(tau_A > n) estimate"),
                };
                let c = if tau.prob <= 0.0 {
                    f64::INFINITY
                } else {
                    pow(nf / (params.tau_margin * tau.prob), 1.0 / alpha)
                };
                (b, c)
            }
        }
    };
    Ok((b * params.tail_scale, c * params.tail_scale))
}

// ---------------------------------------------------------------------------
// Constant estimates

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    ClosedForm,
    McExpectation,
    TailRatio,
    TailRatioDiff,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstantEstimate {
    pub value: f64,
    pub ci_halfwidth: f64,
    pub method: Method,
    pub inputs_hash: u64,
}

impl ConstantEstimate {
    pub fn closed(value: f64, inputs_hash: u64) -> Self {
        ConstantEstimate { value, ci_halfwidth: 0.0, method: Method::ClosedForm, inputs_hash }
    }

    /// `|a - b|` within the joint half-width `√(h_a² + h_b²)` times `widths`.
    pub fn agrees(&self, other: &ConstantEstimate, widths: f64) -> bool {
        fabs(self.value - other.value) <= widths * self.joint_halfwidth(other)
    }

    pub fn joint_halfwidth(&self, other: &ConstantEstimate) -> f64 {
        sqrt(self.ci_halfwidth * self.ci_halfwidth + other.ci_halfwidth * other.ci_halfwidth)
    }
}

struct Fnv(u64);

impl fmt::Write for Fnv {
    fn write_str(&mut self, s: &str) -> fmt::Result {
        for b in s.bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        Ok(())
    }
}

/// FNV-1a hash of a `Debug` rendering of the inputs.
pub fn hash_inputs(args: fmt::Arguments<'_>) -> u64 {
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    let _ = h.write_fmt(args);
    h.0
}

// ---------------------------------------------------------------------------
// Tail-ratio curves

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub x: f64,
    /// Sum of the numerator indicator (or indicator difference).
    pub hits: i64,
    pub reps: u64,
    /// `P(|X| > x)` used in the denominator.
    pub denom: f64,
    pub ratio: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailRatioCurve {
    pub k: usize,
    pub increment: bool,
    pub points: Vec<CurvePoint>,
}

/// Plateau of the last four points: weighted mean, accepted when the
/// weighted slope against `ln x` has a CI containing 0 or the fitted drift
/// over the segment is at most 10%. The half-width treats the points as
/// perfectly correlated (they share one path set).
pub fn plateau(points: &[CurvePoint]) -> Result<(f64, f64)> {
    if points.len() < 4 {
        return input("plateau detection needs at least four grid points");
    }
    let seg = &points[points.len() - 4..];
    let w: Vec<f64> = seg
        .iter()
        .map(|p| if p.se > 0.0 { 1.0 / (p.se * p.se) } else { 1.0 })
        .collect();
    let sw: f64 = w.iter().sum();
    let value = seg.iter().zip(&w).map(|(p, w)| p.ratio * w).sum::<f64>() / sw;
    let se = seg.iter().zip(&w).map(|(p, w)| p.se * w).sum::<f64>() / sw;
    let lx: Vec<f64> = seg.iter().map(|p| log(p.x)).collect();
    let r: Vec<f64> = seg.iter().map(|p| p.ratio).collect();
    let fit = weighted_line(&lx, &r, &w)?;
    // With two residual degrees of freedom the residual scale alone can be
    // arbitrarily small; the weights are inverse variances, so the slope
    // error is at least the known-variance one.
    let mx = lx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let known = if seg.iter().all(|p| p.se > 0.0) { sqrt(1.0 / sxx) } else { 0.0 };
    let slope_ok = fabs(fit.slope) <= Z95 * fit.slope_se.max(known);
    let drift = fabs(fit.slope * (lx[3] - lx[0])) / fabs(value).max(1e-12);
    if slope_ok || drift <= 0.10 {
        Ok((value, Z95 * se))
    } else {
        Err(Error::NoPlateau { ratios: r, drift })
    }
}

/// Log-spaced grid of `points` values on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (log(lo), log(hi));
    (0..points)
        .map(|i| exp(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveConfig {
    pub reps: usize,
    pub seed: u64,
    pub x_grid: Vec<f64>,
    /// Per-step mean subtracted from partial sums. The limits do not depend
    /// on it, but at moderate `x` an uncorrected drift `k E X` biases the
    /// increments upward as `k` grows.
    #[cfg_attr(feature = "serde", serde(default))]
    pub center: f64,
}

struct CurveAcc {
    num: Vec<i64>,
    num_abs: Vec<u64>,
    marg: Vec<u64>,
    values: u64,
}

fn tail_ratio_curve<E: Executor>(
    model: &ModelSpec,
    k: usize,
    increment: bool,
    cfg: &CurveConfig,
    exec: &E,
) -> Result<TailRatioCurve> {
    model.validate()?;
    if k == 0 {
        return input("k must be at least 1");
    }
    if cfg.reps < 64 {
        return input("tail-ratio curves need at least 64 replications");
    }
    if cfg.x_grid.is_empty() || cfg.x_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return input("x grid must be positive and finite");
    }
    let len = if increment { k + 1 } else { k };
    let nx = cfg.x_grid.len();
    let blocks = exec.map(block_count(cfg.reps), |b| {
        let mut acc = CurveAcc { num: vec![0; nx], num_abs: vec![0; nx], marg: vec![0; nx], values: 0 };
        let mut path = vec![0.0; len];
        for rep in block_range(b, cfg.reps) {
            let mut chain = Chain::new(model, StreamKey::new(cfg.seed, rep as u64));
            chain.fill(&mut path);
            let s_k: f64 = path[..k].iter().sum::<f64>() - k as f64 * cfg.center;
            let s_next = if increment { s_k + path[k] - cfg.center } else { s_k };
            for (i, &x) in cfg.x_grid.iter().enumerate() {
                let d = if increment {
                    (s_next > x) as i64 - (s_k > x) as i64
                } else {
                    (s_k > x) as i64
                };
                acc.num[i] += d;
                acc.num_abs[i] += d.unsigned_abs();
                acc.marg[i] += path.iter().filter(|v| fabs(**v) > x).count() as u64;
            }
            acc.values += len as u64;
        }
        acc
    });
    let r = cfg.reps as f64;
    let mut points = Vec::with_capacity(nx);
    for (i, &x) in cfg.x_grid.iter().enumerate() {
        let num: i64 = blocks.iter().map(|a| a.num[i]).sum();
        let num_abs: u64 = blocks.iter().map(|a| a.num_abs[i]).sum();
        let mean = num as f64 / r;
        let var = (num_abs as f64 / r - mean * mean).max(0.0);
        let se_num = sqrt(var / r);
        let (denom, se_den) = match model.exact_abs_tail(x) {
            Some(p) => (p, 0.0),
            None => {
                let freqs: Vec<f64> = blocks.iter().map(|a| a.marg[i] as f64 / a.values as f64).collect();
                let total: u64 = blocks.iter().map(|a| a.marg[i]).sum();
                let values: u64 = blocks.iter().map(|a| a.values).sum();
                let p = total as f64 / values as f64;
                let se = if freqs.len() >= 2 {
                    sqrt(stats::variance(&freqs) / freqs.len() as f64)
                } else {
                    sqrt(p * (1.0 - p) / values as f64)
                };
                (p, se)
            }
        };
        if denom <= 0.0 {
            return Err(Error::Power(format!("no marginal exceedances of x = {x}; lower the grid")));
        }
        let ratio = mean / denom;
        let rel_den = se_den / denom;
        let se = sqrt((se_num / denom) * (se_num / denom) + ratio * ratio * rel_den * rel_den);
        points.push(CurvePoint { x, hits: num, reps: cfg.reps as u64, denom, ratio, se });
    }
    Ok(TailRatioCurve { k, increment, points })
}

/// `P(S_k > x) / P(|X| > x)` across the grid.
pub fn b_plus_k_curve<E: Executor>(model: &ModelSpec, k: usize, cfg: &CurveConfig, exec: &E) -> Result<TailRatioCurve> {
    tail_ratio_curve(model, k, false, cfg, exec)
}

/// Plateau estimate of `b₊(k)`.
pub fn b_plus_k<E: Executor>(model: &ModelSpec, k: usize, cfg: &CurveConfig, exec: &E) -> Result<ConstantEstimate> {
    let curve = b_plus_k_curve(model, k, cfg, exec)?;
    let (value, hw) = plateau(&curve.points)?;
    Ok(ConstantEstimate {
        value,
        ci_halfwidth: hw,
        method: Method::TailRatio,
        inputs_hash: hash_inputs(format_args!("b_plus_k {model:?} {k} {cfg:?}")),
    })
}

/// Paired estimate of `b₊(k+1) - b₊(k)` from one path set of length `k+1`.
pub fn b_plus_increment_curve<E: Executor>(
    model: &ModelSpec,
    k: usize,
    cfg: &CurveConfig,
    exec: &E,
) -> Result<TailRatioCurve> {
    tail_ratio_curve(model, k, true, cfg, exec)
}

pub fn b_plus_increment<E: Executor>(
    model: &ModelSpec,
    k: usize,
    cfg: &CurveConfig,
    exec: &E,
) -> Result<ConstantEstimate> {
    let curve = b_plus_increment_curve(model, k, cfg, exec)?;
    let (value, hw) = plateau(&curve.points)?;
    Ok(ConstantEstimate {
        value,
        ci_halfwidth: hw,
        method: Method::TailRatioDiff,
        inputs_hash: hash_inputs(format_args!("b_plus_increment {model:?} {k} {cfg:?}")),
    })
}

// ---------------------------------------------------------------------------
// Closed forms and expectation estimators

/// Right-tail balance of the noise, swapped for reflected models.
fn balance(noise: &NoiseLaw, reflected: bool) -> Result<(f64, f64)> {
    let p = noise
        .right_balance()
        .ok_or_else(|| Error::Unsupported("noise law is not regularly varying".into()))?;
    Ok(if reflected { (1.0 - p, p) } else { (p, 1.0 - p) })
}

/// Closed-form `b₊` for the members that have one.
pub fn b_plus_closed_form(model: &ModelSpec) -> Option<Result<f64>> {
    let refl = model.reflected;
    Some(match &model.variant {
        Variant::Iid { noise } | Variant::Sv { noise, .. } => balance(noise, refl).map(|(p, _)| p),
        Variant::Ar1 { phi, noise } => balance(noise, refl).map(|(p, _)| {
            let a = noise.tail_index().unwrap();
            // (1 - φ)^{-1} > 0 for |φ| < 1, so only the p term survives.
            (1.0 - pow(fabs(*phi), a)) * p * pow(1.0 - phi, -a)
        }),
        Variant::Ma { theta, noise } => balance(noise, refl).map(|(p, q)| {
            let a = noise.tail_index().unwrap();
            let total: f64 = 1.0 + theta.iter().sum::<f64>();
            let norm: f64 = 1.0 + theta.iter().map(|t| pow(fabs(*t), a)).sum::<f64>();
            (p * pow(total.max(0.0), a) + q * pow((-total).max(0.0), a)) / norm
        }),
        _ => return None,
    })
}

/// `b₊(k)` for an MA model from its limit measure: sums over the windows a
/// single large `Z` falls into.
pub fn ma_b_plus_k(theta: &[f64], noise: &NoiseLaw, k: usize, reflected: bool) -> Result<f64> {
    let (p, q) = balance(noise, reflected)?;
    let a = noise.tail_index().unwrap();
    let mut coef = vec![1.0];
    coef.extend_from_slice(theta);
    let m = theta.len();
    let norm: f64 = coef.iter().map(|c| pow(fabs(*c), a)).sum();
    // A shock at time s contributes Σ_{t ∈ [1,k], 0 ≤ t - s ≤ m} θ_{t-s}.
    let mut total = 0.0;
    for s in (1 - m as i64)..=(k as i64) {
        let mut c = 0.0;
        for t in 1..=(k as i64) {
            let j = t - s;
            if (0..=m as i64).contains(&j) {
                c += coef[j as usize];
            }
        }
        total += p * pow(c.max(0.0), a) + q * pow((-c).max(0.0), a);
    }
    Ok(total / norm)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SeriesParams {
    pub reps: usize,
    pub seed: u64,
    pub cap: usize,
    pub tol: f64,
}

impl Default for SeriesParams {
    fn default() -> Self {
        SeriesParams { reps: 200_000, seed: 1, cap: SERIES_CAP, tol: SERIES_TOL }
    }
}

fn check_series(p: &SeriesParams) -> Result<()> {
    if p.reps < stats::BATCHES {
        return input(format!("need at least {} replications", stats::BATCHES));
    }
    if !(p.tol > 0.0 && p.tol < 1.0) || p.cap == 0 {
        return input("series tolerance must lie in (0, 1) and the cap must be positive");
    }
    Ok(())
}

/// `b₊ = E[(1 + Σ Π_i)^α - (Σ Π_i)^α]` for the random recursions.
pub fn sre_b_plus<E: Executor>(model: &ModelSpec, params: &SeriesParams, exec: &E) -> Result<ConstantEstimate> {
    check_series(params)?;
    let (a, alpha) = match &model.variant {
        Variant::SreAffine { a, alpha, .. } | Variant::SreMax { a, alpha, .. } | Variant::Letac { a, alpha, .. } => {
            (a.clone(), *alpha)
        }
        _ => return Err(Error::Unsupported(format!("sre_b_plus does not apply to {}", model.name()))),
    };
    if a.is_random() {
        model.validate()?;
    }
    let capped = core::sync::atomic::AtomicUsize::new(0);
    let values = collect_reps(exec, params.reps, |rep| {
        let mut rng = StreamKey::new(params.seed, rep as u64).substream(tag::CONSTANT).rng();
        let mut prod = 1.0;
        let mut sum = 0.0;
        let mut i = 0;
        loop {
            prod *= a.sample(&mut rng);
            sum += prod;
            i += 1;
            if prod < params.tol {
                break;
            }
            if i >= params.cap {
                capped.fetch_add(1, core::sync::atomic::Ordering::Relaxed);
                break;
            }
        }
        pow(1.0 + sum, alpha) - pow(sum, alpha)
    });
    let capped = capped.into_inner();
    if capped * 100 > params.reps {
        return Err(Error::Truncation { capped, reps: params.reps });
    }
    let bm = batch_means(&values)?;
    let value = if model.reflected { 0.0 } else { bm.mean };
    if model.reflected && !nonnegative_recursion(model) {
        return Err(Error::Unsupported("left-tail constant of a signed recursion needs the differencing estimator".into()));
    }
    Ok(ConstantEstimate {
        value,
        ci_halfwidth: if model.reflected { 0.0 } else { bm.halfwidth() },
        method: if model.reflected { Method::ClosedForm } else { Method::McExpectation },
        inputs_hash: hash_inputs(format_args!("sre_b_plus {model:?} {params:?}")),
    })
}

fn nonnegative_recursion(model: &ModelSpec) -> bool {
    match &model.variant {
        Variant::SreAffine { b, .. } | Variant::SreMax { b, .. } => b.is_nonnegative(),
        Variant::Letac { d, .. } => d.is_nonnegative(),
        _ => false,
    }
}

/// GARCH(1,1) `b₊`, with the symmetry of `Z` used as an antithetic pair
/// `(Z₀, -Z₀)`; without it the integrand has infinite variance for α > 2.
pub fn garch_b_plus<E: Executor>(model: &ModelSpec, params: &SeriesParams, exec: &E) -> Result<ConstantEstimate> {
    check_series(params)?;
    let (alpha1, beta1, noise, alpha) = match &model.variant {
        Variant::Garch11 { alpha1, beta1, noise, alpha, .. } => (*alpha1, *beta1, noise.clone(), *alpha),
        _ => return Err(Error::Unsupported(format!("garch_b_plus does not apply to {}", model.name()))),
    };
    model.validate()?;
    let capped = core::sync::atomic::AtomicUsize::new(0);
    let values = collect_reps(exec, params.reps, |rep| {
        let mut rng = StreamKey::new(params.seed, rep as u64).substream(tag::CONSTANT).rng();
        let z0 = noise.sample(&mut rng);
        let a1 = alpha1 * z0 * z0 + beta1;
        let mut prod = 1.0;
        let mut t_inf = 0.0;
        let mut i = 0;
        loop {
            let z = noise.sample(&mut rng);
            t_inf += z * prod;
            prod *= sqrt(alpha1 * z * z + beta1);
            i += 1;
            if prod < params.tol {
                break;
            }
            if i >= params.cap {
                capped.fetch_add(1, core::sync::atomic::Ordering::Relaxed);
                break;
            }
        }
        let y = sqrt(a1) * t_inf;
        0.5 * (pow(fabs(z0 + y), alpha) + pow(fabs(-z0 + y), alpha)) - pow(fabs(y), alpha)
    });
    let capped = capped.into_inner();
    if capped * 100 > params.reps {
        return Err(Error::Truncation { capped, reps: params.reps });
    }
    let bm = batch_means(&values)?;
    let ez = noise
        .abs_moment(alpha)
        .ok_or_else(|| Error::Model("E|Z|^alpha must be finite".into()))?;
    let scale = 1.0 / (2.0 * ez);
    Ok(ConstantEstimate {
        value: bm.mean * scale,
        ci_halfwidth: bm.halfwidth() * scale,
        method: Method::McExpectation,
        inputs_hash: hash_inputs(format_args!("garch_b_plus {model:?} {params:?}")),
    })
}

/// Goldie constant `c∞⁺` in `P(X > x) ~ c∞⁺ x^{-α}` for the positive
/// recursions, and for the GARCH variance `σ²` at index `α/2`.
///
/// `c∞⁺ = E[(Ψ(X₀)⁺)^α - ((A X₀)⁺)^α] / (α E A^α ln A)` with `X₀` from the
/// stationary start and `A` shared between numerator and denominator.
pub fn goldie_c_plus<E: Executor>(model: &ModelSpec, params: &SeriesParams, exec: &E) -> Result<ConstantEstimate> {
    check_series(params)?;
    model.validate()?;
    let factor = model
        .factor()
        .ok_or_else(|| Error::Unsupported(format!("goldie_c_plus does not apply to {}", model.name())))?;
    let index = match &model.variant {
        Variant::Garch11 { alpha, .. } => 0.5 * alpha,
        _ => model.alpha().unwrap(),
    };
    let pos = |v: f64| v.max(0.0);
    let pairs: Vec<(f64, f64)> = exec
        .map(block_count(params.reps), |b| {
            block_range(b, params.reps)
                .map(|rep| {
                    let key = StreamKey::new(params.seed, rep as u64);
                    let plain = ModelSpec { variant: model.variant.clone(), reflected: false };
                    let x0 = Chain::new(&plain, key).state();
                    let mut rng = key.substream(tag::CONSTANT).rng();
                    let a = factor.sample(&mut rng);
                    let psi = match &model.variant {
                        Variant::SreAffine { b, .. } => a * x0 + b.sample(&mut rng),
                        Variant::SreMax { b, .. } => (a * x0).max(b.sample(&mut rng)),
                        Variant::Letac { c, d, .. } => {
                            let cc = c.sample(&mut rng);
                            a * x0.max(cc) + d.sample(&mut rng)
                        }
                        Variant::Garch11 { alpha0, .. } => alpha0 + a * x0,
                        _ => unreachable!(),
                    };
                    let num = pow(pos(psi), index) - pow(pos(a * x0), index);
                    let den = if a > 0.0 { index * pow(a, index) * log(a) } else { 0.0 };
                    (num, den)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    let num: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let den: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (r, se, bden) = ratio_of_means(&num, &den)?;
    if fabs(bden.mean) <= bden.halfwidth() {
        return Err(Error::IllPosed(format!(
            "denominator alpha E A^alpha ln A = {} has a CI covering 0",
            bden.mean
        )));
    }
    Ok(ConstantEstimate {
        value: r,
        ci_halfwidth: Z95 * se,
        method: Method::McExpectation,
        inputs_hash: hash_inputs(format_args!("goldie_c_plus {model:?} {params:?}")),
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LimitParams {
    pub series: SeriesParams,
    /// Replications per differencing level.
    pub diff_reps: usize,
    /// Grid used at each differencing level; chosen from the marginal scale
    /// when empty.
    pub x_grid: Vec<f64>,
}

impl Default for LimitParams {
    fn default() -> Self {
        LimitParams { series: SeriesParams::default(), diff_reps: 200_000, x_grid: Vec::new() }
    }
}

/// One differencing level of the escalation trace.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiffLevel {
    pub k: usize,
    pub value: f64,
    pub ci_halfwidth: f64,
}

/// Differencing fallback: `b̂₊(k+1) - b̂₊(k)` for `k = 2, 4, ..., 32` until
/// two successive levels agree within their joint half-width.
pub fn b_plus_by_differencing<E: Executor>(
    model: &ModelSpec,
    cfg: &CurveConfig,
    exec: &E,
) -> Result<(ConstantEstimate, Vec<DiffLevel>)> {
    let mut trace: Vec<DiffLevel> = Vec::new();
    let mut k = 2;
    while k <= 32 {
        let level_cfg = CurveConfig { seed: StreamKey::phase(cfg.seed, k as u64), ..cfg.clone() };
        match b_plus_increment(model, k, &level_cfg, exec) {
            Ok(est) => {
                let level = DiffLevel { k, value: est.value, ci_halfwidth: est.ci_halfwidth };
                if let Some(prev) = trace.iter().rev().find(|l| l.value.is_finite()) {
                    let joint = sqrt(prev.ci_halfwidth * prev.ci_halfwidth + level.ci_halfwidth * level.ci_halfwidth);
                    if fabs(prev.value - level.value) <= joint {
                        trace.push(level);
                        return Ok((
                            ConstantEstimate {
                                value: est.value.max(0.0),
                                ci_halfwidth: est.ci_halfwidth,
                                method: Method::TailRatioDiff,
                                inputs_hash: hash_inputs(format_args!("differencing {model:?} {cfg:?}")),
                            },
                            trace,
                        ));
                    }
                }
                trace.push(level);
            }
            Err(Error::NoPlateau { .. }) => trace.push(DiffLevel { k, value: f64::NAN, ci_halfwidth: f64::NAN }),
            Err(e) => return Err(e),
        }
        k *= 2;
    }
    Err(Error::Unstable { trace: trace.iter().map(|l| (l.k, l.value, l.ci_halfwidth)).collect() })
}

/// `b₊` by the route appropriate for the model: closed form, expectation
/// Monte Carlo, or differencing.
pub fn b_plus_limit<E: Executor>(model: &ModelSpec, params: &LimitParams, exec: &E) -> Result<ConstantEstimate> {
    model.validate()?;
    let hash = hash_inputs(format_args!("b_plus_limit {model:?} {params:?}"));
    if let Some(v) = b_plus_closed_form(model) {
        return Ok(ConstantEstimate::closed(v?, hash));
    }
    match &model.variant {
        Variant::SreAffine { .. } | Variant::SreMax { .. } | Variant::Letac { .. } if !model.reflected || nonnegative_recursion(model) => {
            sre_b_plus(model, &params.series, exec)
        }
        Variant::Garch11 { .. } => {
            // Z symmetric: b₋ = b₊.
            let plain = ModelSpec { variant: model.variant.clone(), reflected: false };
            garch_b_plus(&plain, &params.series, exec)
        }
        _ => {
            if params.x_grid.is_empty() {
                return input("differencing needs an explicit x grid for this model");
            }
            let center = if model.centered() { model.mean_closed_form().unwrap_or(0.0) } else { 0.0 };
            let cfg =
                CurveConfig { reps: params.diff_reps, seed: params.series.seed, x_grid: params.x_grid.clone(), center };
            b_plus_by_differencing(model, &cfg, exec).map(|r| r.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Marginal tails and means

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailValue {
    pub prob: f64,
    /// Absolute error band.
    pub band: f64,
    pub exact: bool,
}

/// Marginal tail `P(|X| > x)` of a model: exact, a closed asymptotic form,
/// or a Goldie-constant form with its Monte Carlo band.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginalTail {
    pub model: ModelSpec,
    pub alpha: f64,
    /// `C` in `P(|X| > x) ~ C x^{-α}`.
    pub constant: f64,
    pub constant_halfwidth: f64,
    /// Smallest `x` at which the asymptotic form is trusted.
    pub threshold: f64,
}

impl MarginalTail {
    /// Closed forms: IID, MA, AR(1), stochastic volatility.
    pub fn closed(model: &ModelSpec) -> Result<Self> {
        model.validate()?;
        let alpha = model
            .alpha()
            .ok_or_else(|| Error::Unsupported("marginal tail of a light-tailed model".into()))?;
        let constant = model
            .closed_tail_constant()
            .ok_or_else(|| Error::Unsupported(format!("{} needs a Goldie-constant calibration", model.name())))?;
        let scale = pow(constant, 1.0 / alpha);
        let threshold = if model.exact_abs_tail(1.0).is_some() { 0.0 } else { 10.0 * scale };
        Ok(MarginalTail { model: model.clone(), alpha, constant, constant_halfwidth: 0.0, threshold })
    }

    /// Goldie form for the random recursions (`X ≥ 0`) and GARCH
    /// (`P(|X| > x) ~ E|Z|^α c x^{-α}` with `c` the variance constant).
    pub fn calibrated(model: &ModelSpec, c_plus: &ConstantEstimate) -> Result<Self> {
        model.validate()?;
        let alpha = model.alpha().unwrap();
        let (constant, hw) = match &model.variant {
            Variant::Garch11 { noise, .. } => {
                let ez = noise.abs_moment(alpha).unwrap();
                (ez * c_plus.value, ez * c_plus.ci_halfwidth)
            }
            Variant::SreAffine { .. } | Variant::SreMax { .. } | Variant::Letac { .. } => {
                if !nonnegative_recursion(model) {
                    return Err(Error::Unsupported("the Goldie form needs a nonnegative recursion".into()));
                }
                (c_plus.value, c_plus.ci_halfwidth)
            }
            _ => return Self::closed(model),
        };
        if !(constant > 0.0) {
            return Err(Error::IllPosed(format!("tail constant {constant} is not positive")));
        }
        let scale = pow(constant, 1.0 / alpha);
        Ok(MarginalTail { model: model.clone(), alpha, constant, constant_halfwidth: hw, threshold: 10.0 * scale })
    }

    /// `x_s = C^{1/α}`.
    pub fn scale(&self) -> f64 {
        pow(self.constant, 1.0 / self.alpha)
    }

    pub fn prob(&self, x: f64) -> Result<TailValue> {
        crate::error::finite("x", x)?;
        if let Some(p) = self.model.exact_abs_tail(x) {
            return Ok(TailValue { prob: p, band: 0.0, exact: true });
        }
        if x < self.threshold {
            return Err(Error::BelowRegime { x, threshold: self.threshold });
        }
        let base = pow(x, -self.alpha);
        Ok(TailValue { prob: self.constant * base, band: self.constant_halfwidth * base, exact: false })
    }

    /// Largest `x` at which `count · P(|X| > x)` is still `hits`.
    pub fn power_limit(&self, count: f64, hits: f64) -> f64 {
        self.scale() * pow(count / hits, 1.0 / self.alpha)
    }
}

/// `P(|X| > x)` with its error band.
pub fn marginal_tail(tail: &MarginalTail, x: f64) -> Result<TailValue> {
    tail.prob(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanValue {
    pub value: f64,
    pub ci_halfwidth: f64,
    pub exact: bool,
}

/// `E X`: closed form, otherwise the average of independent stationary
/// draws with a batch-means interval.
pub fn model_mean<E: Executor>(model: &ModelSpec, reps: usize, seed: u64, exec: &E) -> Result<MeanValue> {
    if let Some(m) = model.mean_closed_form() {
        return Ok(MeanValue { value: m, ci_halfwidth: 0.0, exact: true });
    }
    let values = collect_reps(exec, reps.max(stats::BATCHES), |rep| {
        let mut c = Chain::new(model, StreamKey::new(seed, rep as u64).substream(tag::PROBE));
        c.step()
    });
    let bm = batch_means(&values)?;
    Ok(MeanValue { value: bm.mean, ci_halfwidth: bm.halfwidth(), exact: false })
}

/// Kesten root of `κ ↦ E A^κ` estimated on a common-random-number sample.
pub fn kesten_root_mc(a: &ALaw, draws: usize, seed: u64) -> Option<f64> {
    let mut rng = StreamKey::new(seed, 0).substream(tag::CONSTANT).rng();
    let sample: Vec<f64> = (0..draws).map(|_| a.sample(&mut rng)).collect();
    let f = |k: f64| log(ALaw::moment_mc(&sample, k));
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 256.0 {
            return None;
        }
    }
    crate::math::bisect(f, 1e-6, hi, 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::rv::TailSpec;

    fn pareto(alpha: f64, p: f64) -> NoiseLaw {
        NoiseLaw::Pareto(TailSpec::pareto(alpha, p).unwrap())
    }

    #[test]
    fn region_examples() {
        let p = RegionParams { a: Some(1.5), ..RegionParams::default() };
        let r = region(3.0, 10_000, RegionRule::NagaevIid, &p).unwrap();
        assert!((r.b_n - 371.7).abs() < 0.1, "{}", r.b_n);
        let r = region(1.5, 10_000, RegionRule::NagaevIid, &RegionParams::default()).unwrap();
        assert!((r.b_n / 1.1659e3 - 1.0).abs() < 1e-3, "{}", r.b_n);
        assert!(r.c_n.is_infinite());
        assert!(matches!(
            region(2.0, 100, RegionRule::Sre, &RegionParams::default()),
            Err(Error::UnsupportedBoundary { .. })
        ));
        assert!(region(3.0, 100, RegionRule::NagaevIid, &RegionParams { a: Some(0.5), ..RegionParams::default() }).is_err());
        let s = region(1.5, 1000, RegionRule::Sre, &RegionParams::default()).unwrap();
        assert!((s.c_n - exp(20.0)).abs() < 1e-6 * s.c_n);
        assert!(region(1.5, 1000, RegionRule::MarkovAtom, &RegionParams::default()).is_err());
    }

    #[test]
    fn regions_are_monotone() {
        let rules = [RegionRule::NagaevIid, RegionRule::M0Dep, RegionRule::Sv, RegionRule::Sre, RegionRule::Garch];
        for rule in rules {
            for &alpha in &[0.7, 1.5, 3.0] {
                let mut prev = 0.0;
                // e^{γn} only clears b_n once n is a few hundred.
                for n in (300..3000).step_by(7) {
                    let r = region(alpha, n, rule, &RegionParams::default()).unwrap();
                    assert!(r.b_n >= prev, "{rule} {alpha} {n}");
                    prev = r.b_n;
                }
            }
        }
    }

    #[test]
    fn closed_forms() {
        let ar: ModelSpec = Variant::Ar1 { phi: 0.5, noise: pareto(1.5, 1.0) }.into();
        let b = b_plus_closed_form(&ar).unwrap().unwrap();
        assert!((b - (pow(2.0, 1.5) - 1.0)).abs() < 1e-12, "{b}");
        let ar0: ModelSpec = Variant::Ar1 { phi: 0.0, noise: pareto(1.5, 0.7) }.into();
        assert!((b_plus_closed_form(&ar0).unwrap().unwrap() - 0.7).abs() < 1e-15);
        let iid = ModelSpec::iid(pareto(1.5, 0.7));
        assert_eq!(b_plus_closed_form(&iid).unwrap().unwrap(), 0.7);
        assert!((b_plus_closed_form(&iid.mirrored()).unwrap().unwrap() - 0.3).abs() < 1e-15);
        let sv: ModelSpec = Variant::Sv { a: 0.5, sigma_eta: 0.3, noise: pareto(1.5, 0.6) }.into();
        assert_eq!(b_plus_closed_form(&sv).unwrap().unwrap(), 0.6);
    }

    #[test]
    fn ma_limit_measure_difference() {
        let noise = pareto(1.5, 0.7);
        let theta = [0.5];
        let b1 = ma_b_plus_k(&theta, &noise, 1, false).unwrap();
        let b2 = ma_b_plus_k(&theta, &noise, 2, false).unwrap();
        let m: ModelSpec = Variant::Ma { theta: theta.to_vec(), noise: noise.clone() }.into();
        let closed = b_plus_closed_form(&m).unwrap().unwrap();
        assert!((b2 - b1 - closed).abs() < 1e-12);
        // b₊(1) of an MA is the marginal balance p.
        assert!((b1 - 0.7).abs() < 1e-12);
        // θ = 0 collapses to IID b₊(k) = k p.
        for k in 1..6 {
            assert!((ma_b_plus_k(&[0.0], &noise, k, false).unwrap() - 0.7 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn sre_constant_degenerate_cases() {
        let p = SeriesParams { reps: 256, ..SeriesParams::default() };
        let zero: ModelSpec = Variant::SreAffine { a: ALaw::Constant { value: 0.0 }, b: pareto(1.5, 1.0), alpha: 1.5 }.into();
        let e = sre_b_plus(&zero, &p, &Serial).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.ci_halfwidth, 0.0);
        let phi = 0.5;
        let det: ModelSpec = Variant::SreAffine { a: ALaw::Constant { value: phi }, b: pareto(1.5, 1.0), alpha: 1.5 }.into();
        let e = sre_b_plus(&det, &p, &Serial).unwrap();
        let closed = pow(1.0 - phi, -1.5) * (1.0 - pow(phi, 1.5));
        assert!((e.value - closed).abs() < 1e-9, "{} vs {closed}", e.value);
        assert!(e.ci_halfwidth < 1e-9);
        let unit: ModelSpec = Variant::SreAffine {
            a: ALaw::lognormal_with_root(1.0, 0.5),
            b: NoiseLaw::Uniform { lo: 0.0, hi: 1.0 },
            alpha: 1.0,
        }
        .into();
        let e = sre_b_plus(&unit, &p, &Serial).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn goldie_vanishes_without_b() {
        let m: ModelSpec = Variant::SreAffine {
            a: ALaw::lognormal_with_root(1.5, 0.6),
            b: NoiseLaw::Constant { value: 0.0 },
            alpha: 1.5,
        }
        .into();
        let p = SeriesParams { reps: 2048, ..SeriesParams::default() };
        let e = goldie_c_plus(&m, &p, &Serial).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn plateau_accepts_flat_and_rejects_trend() {
        let mk = |r: &[f64]| -> Vec<CurvePoint> {
            r.iter()
                .enumerate()
                .map(|(i, v)| CurvePoint { x: 10.0 * (i + 1) as f64, hits: 0, reps: 1, denom: 1.0, ratio: *v, se: 0.01 })
                .collect()
        };
        let (v, _) = plateau(&mk(&[0.3, 0.5, 0.70, 0.71, 0.69, 0.70])).unwrap();
        assert!((v - 0.70).abs() < 0.01);
        assert!(matches!(plateau(&mk(&[0.1, 0.2, 0.4, 0.8, 1.6, 3.2])), Err(Error::NoPlateau { .. })));
    }

    #[test]
    fn hash_changes_with_inputs() {
        let a = hash_inputs(format_args!("{:?}", ModelSpec::iid(pareto(1.5, 0.7))));
        let b = hash_inputs(format_args!("{:?}", ModelSpec::iid(pareto(1.5, 0.6))));
        assert_ne!(a, b);
    }

    #[test]
    fn kesten_mc_matches_closed_root() {
        let a = ALaw::lognormal_with_root(1.5, 0.6);
        let r = kesten_root_mc(&a, 200_000, 3).unwrap();
        assert!((r - 1.5).abs() < 0.1, "{r}");
    }
}
