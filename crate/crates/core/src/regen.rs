//! Nummelin splitting, regeneration cycles and drift certification.
//!
//! Splitting is retrospective: the chain is simulated exactly as
//! [`crate::models::simulate`] does, and after every step whose previous
//! state lies in the small set a coin on its own substream decides, with
//! probability `ε ν(y) / f(y | x)`, whether the new state was drawn from the
//! regeneration law `ν`. The joint law of path and coins is that of the
//! split chain, and paths are bit-identical to unsplit simulation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use libm::{asinh, fabs, log, pow, sinh, sqrt};
use rand_core::RngCore;

use crate::error::{input, Error, Result};
use crate::exec::{block_count, block_range, collect_reps, Executor};
use crate::ldp::{ConditionReport, ConditionTag, TracePoint};
use crate::math::normal_pdf;
use crate::models::{ALaw, Chain, ModelSpec, Step, Variant};
use crate::noise::NoiseLaw;
use crate::rng::{tag, uniform, StreamKey, StreamRng};
use crate::stats::{self, batch_means, line_known_variance, wilson, Z95};
use crate::theory::{plateau, CurvePoint, MarginalTail};

/// Floor on `ε` below which splitting is too rare to be useful.
pub const EPSILON_FLOOR: f64 = 1e-3;
/// Default number of grid cells of `ν`.
pub const GRID_CELLS: usize = 4096;
/// Relative slack of the construction-time soundness check.
pub const SOUNDNESS_SLACK: f64 = 1e-6;

/// Small set `C = [lo, hi]` of the Markov coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmallSet {
    pub lo: f64,
    pub hi: f64,
}

impl SmallSet {
    pub fn symmetric(c: f64) -> Self {
        SmallSet { lo: -c, hi: c }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// One-step kernel `f(u | x)` in the coordinate the minorization lives on.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kernel", rename_all = "snake_case"))]
pub enum Kernel {
    /// Next state independent of the current one: every step regenerates.
    Whole,
    /// `u = φ x + Z`: AR(1) and the log-volatility of the SV model.
    Location { base: NoiseLaw, phi: f64 },
    /// `u = ln(A m)` with `ln A ~ N(μ, σ²)` and `m = x` (or `max(x, C)`).
    LogFactor { mu: f64, sigma: f64, letac: bool },
    /// `u = (α₁ Z² + β₁) s` with `s = σ²`.
    Variance { alpha1: f64, beta1: f64, noise: NoiseLaw },
}

/// Lag between the regenerating transition and the first observation of the
/// new cycle: GARCH regenerates `σ²_{t+1}`, whose observation comes next.
fn cycle_lag(model: &ModelSpec) -> usize {
    matches!(model.variant, Variant::Garch11 { .. }) as usize
}

impl Kernel {
    fn for_model(model: &ModelSpec) -> Result<Kernel> {
        Ok(match &model.variant {
            Variant::Iid { .. } => Kernel::Whole,
            Variant::Ar1 { phi, noise } => {
                if *phi == 0.0 {
                    Kernel::Whole
                } else {
                    if noise.density(0.0).is_none() {
                        return Err(Error::Unsupported("minorization needs a noise density".into()));
                    }
                    Kernel::Location { base: noise.clone(), phi: *phi }
                }
            }
            Variant::Sv { a, sigma_eta, .. } => {
                if *a == 0.0 {
                    Kernel::Whole
                } else {
                    Kernel::Location { base: NoiseLaw::Gaussian { sd: *sigma_eta }, phi: *a }
                }
            }
            Variant::SreAffine { a, .. } | Variant::SreMax { a, .. } | Variant::Letac { a, .. } => match a {
                ALaw::LogNormal { mu, sigma } => Kernel::LogFactor {
                    mu: *mu,
                    sigma: *sigma,
                    letac: matches!(model.variant, Variant::Letac { .. }),
                },
                _ => return Err(Error::Unsupported("minorization of a recursion needs a lognormal factor".into())),
            },
            Variant::Garch11 { alpha1, beta1, noise, .. } => {
                if *alpha1 <= 0.0 || !noise.is_symmetric() || noise.density(0.0).is_none() {
                    return Err(Error::Unsupported(
                        "GARCH minorization needs alpha1 > 0 and a symmetric noise density".into(),
                    ));
                }
                Kernel::Variance { alpha1: *alpha1, beta1: *beta1, noise: noise.clone() }
            }
            Variant::Ma { .. } => {
                return Err(Error::Unsupported("moving averages are not Markov in X; no splitting".into()))
            }
        })
    }

    /// Conditioning value and coordinate of a step. Letac steps with `C_t`
    /// above the set are handled by the caller.
    fn coordinate(&self, s: &Step) -> (f64, f64) {
        match self {
            Kernel::Whole => (s.prev, s.state),
            Kernel::Location { .. } => (s.prev, s.state),
            Kernel::LogFactor { letac, .. } => {
                let m = if *letac { s.prev.max(s.aux) } else { s.prev };
                (m, log(s.factor) + log(m))
            }
            Kernel::Variance { .. } => (s.prev, s.factor * s.prev),
        }
    }

    fn variance_density(alpha1: f64, beta1: f64, noise: &NoiseLaw, v: f64) -> f64 {
        if v <= beta1 {
            return 0.0;
        }
        let q = (v - beta1) / alpha1;
        let r = sqrt(q);
        noise.density(r).unwrap_or(0.0) / (r * alpha1)
    }

    /// `f(u | x)`.
    fn density(&self, u: f64, x: f64) -> f64 {
        match self {
            Kernel::Whole => f64::NAN,
            Kernel::Location { base, phi } => base.density(u - phi * x).unwrap_or(0.0),
            Kernel::LogFactor { mu, sigma, .. } => normal_pdf((u - mu - log(x)) / sigma) / sigma,
            Kernel::Variance { alpha1, beta1, noise } => Self::variance_density(*alpha1, *beta1, noise, u / x) / x,
        }
    }

    /// A lower bound on `inf_{x ∈ [lo, hi]} f(u | x)`.
    fn inf_over(&self, u: f64, set: &SmallSet) -> f64 {
        match self {
            Kernel::Whole => f64::NAN,
            Kernel::Location { base, phi } => {
                let (a, b) = (u - phi * set.hi, u - phi * set.lo);
                base.density_inf(a.min(b), a.max(b)).unwrap_or(0.0)
            }
            Kernel::LogFactor { mu, sigma, .. } => {
                let d = fabs(u - mu - log(set.lo)).max(fabs(u - mu - log(set.hi)));
                normal_pdf(d / sigma) / sigma
            }
            Kernel::Variance { alpha1, beta1, noise } => {
                // f_V is nonincreasing, so on [s_j, s_{j+1}] the density is at
                // least f_V(u / s_j) / s_{j+1}.
                const PARTS: usize = 256;
                let r = pow(set.hi / set.lo, 1.0 / PARTS as f64);
                let mut best = f64::INFINITY;
                let mut s = set.lo;
                for j in 0..PARTS {
                    let next = if j + 1 == PARTS { set.hi } else { s * r };
                    if u / next <= *beta1 {
                        return 0.0;
                    }
                    best = best.min(Self::variance_density(*alpha1, *beta1, noise, u / s) / next);
                    s = next;
                }
                best
            }
        }
    }

    /// Coordinate range carrying all but about `1e-8` of the kernel mass for
    /// every `x` in the set, an asinh scale, and the centre of the bulk.
    fn range(&self, set: &SmallSet) -> (f64, f64, f64, f64) {
        match self {
            Kernel::Whole => (0.0, 1.0, 1.0, 0.5),
            Kernel::Location { base, phi } => {
                let b = base.abs_quantile_bound(1e-8);
                let (a, c) = (phi * set.lo, phi * set.hi);
                let scale = base.abs_quantile_bound(0.5).max(1e-12);
                (a.min(c) - b, a.max(c) + b, scale, 0.5 * (a + c))
            }
            Kernel::LogFactor { mu, sigma, .. } => {
                let w = 6.5 * sigma;
                let (lo, hi) = (mu + log(set.lo) - w, mu + log(set.hi) + w);
                (lo, hi, sigma * 50.0, 0.5 * (lo + hi))
            }
            Kernel::Variance { alpha1, beta1, noise } => {
                let z = noise.abs_quantile_bound(1e-8);
                let top = (alpha1 * z * z + beta1) * set.hi;
                (beta1 * set.hi, top, alpha1 * set.hi, (alpha1 + beta1) * set.hi)
            }
        }
    }
}

/// Regeneration measure: `ε ν(B) ≤ P(x, B)` for `x ∈ C`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Minorization {
    pub set: SmallSet,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Grid nodes of the coordinate (empty for [`Kernel::Whole`]).
    pub nodes: Vec<f64>,
    /// `ε ν` at the nodes; linear in between.
    pub nu_raw: Vec<f64>,
    /// Normalized CDF of `ν` at the nodes.
    pub cdf: Vec<f64>,
    pub lag: usize,
}

impl Minorization {
    /// `ε ν(u)` by linear interpolation.
    pub fn eps_nu(&self, u: f64) -> f64 {
        let n = self.nodes.len();
        if n == 0 || u < self.nodes[0] || u > self.nodes[n - 1] {
            return 0.0;
        }
        let j = self.nodes.partition_point(|v| *v <= u).clamp(1, n - 1) - 1;
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        let t = (u - a) / (b - a);
        self.nu_raw[j] * (1.0 - t) + self.nu_raw[j + 1] * t
    }

    /// Normalized density `ν(u)`.
    pub fn nu(&self, u: f64) -> f64 {
        self.eps_nu(u) / self.epsilon
    }

    /// `ν((-∞, u])` from the interpolant.
    pub fn nu_cdf(&self, u: f64) -> f64 {
        let n = self.nodes.len();
        if u <= self.nodes[0] {
            return 0.0;
        }
        if u >= self.nodes[n - 1] {
            return 1.0;
        }
        let j = self.nodes.partition_point(|v| *v <= u) - 1;
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        let (fa, fb) = (self.nu_raw[j], self.nu_raw[j + 1]);
        let t = u - a;
        let slope = (fb - fa) / (b - a);
        self.cdf[j] + (fa * t + 0.5 * slope * t * t) / self.epsilon
    }

    /// Inverse-CDF draw from `ν` (piecewise-linear density).
    pub fn sample_nu<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.nodes.len();
        let u = uniform(rng);
        let j = self.cdf.partition_point(|c| *c <= u).clamp(1, n - 1) - 1;
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        let (fa, fb) = (self.nu_raw[j] / self.epsilon, self.nu_raw[j + 1] / self.epsilon);
        let target = u - self.cdf[j];
        let w = b - a;
        let slope = (fb - fa) / w;
        // Solve fa t + slope t² / 2 = target on [0, w].
        let t = if fabs(slope) * w < 1e-12 * fa.max(1e-300) {
            target / fa
        } else {
            let disc = (fa * fa + 2.0 * slope * target).max(0.0);
            (sqrt(disc) - fa) / slope
        };
        a + t.clamp(0.0, w)
    }

    /// Probability that the transition in `s` regenerates.
    pub fn regen_probability(&self, s: &Step) -> f64 {
        if matches!(self.kernel, Kernel::Whole) {
            return 1.0;
        }
        if !self.set.contains(s.prev) {
            return 0.0;
        }
        if let Kernel::LogFactor { letac: true, .. } = self.kernel {
            // C_t above the set makes A max(x, C_t) = A C_t free of x.
            if s.aux > self.set.hi {
                return 1.0;
            }
        }
        let (x, u) = self.kernel.coordinate(s);
        let f = self.kernel.density(u, x);
        if !(f > 0.0) {
            return 0.0;
        }
        (self.eps_nu(u) / f).min(1.0)
    }
}

/// `ν_raw(u) = inf_{x ∈ C} f(u | x)` on a grid, with `ε = ∫ ν_raw`.
pub fn build_minorization(model: &ModelSpec, set: SmallSet, grid_points: usize) -> Result<Minorization> {
    model.validate_dynamics()?;
    if !(set.lo.is_finite() && set.hi.is_finite() && set.lo <= set.hi) {
        return input(format!("small set [{}, {}] is not an interval", set.lo, set.hi));
    }
    let kernel = Kernel::for_model(model)?;
    let lag = cycle_lag(model);
    if matches!(kernel, Kernel::Whole) {
        return Ok(Minorization { set, epsilon: 1.0, kernel, nodes: Vec::new(), nu_raw: Vec::new(), cdf: Vec::new(), lag });
    }
    if matches!(kernel, Kernel::LogFactor { .. } | Kernel::Variance { .. }) && !(set.lo > 0.0) {
        return input("the small set of a positive recursion must lie in (0, inf)");
    }
    if grid_points < 16 {
        return input("grid needs at least 16 cells");
    }
    let (lo, hi, scale, centre) = kernel.range(&set);
    let (ulo, uhi) = (asinh((lo - centre) / scale), asinh((hi - centre) / scale));
    let nodes: Vec<f64> = (0..=grid_points)
        .map(|i| centre + scale * sinh(ulo + (uhi - ulo) * i as f64 / grid_points as f64))
        .collect();
    let mut nu_raw: Vec<f64> = nodes.iter().map(|&u| kernel.inf_over(u, &set)).collect();
    // Linear interpolation overshoots where the infimum is convex. Check
    // interior points of each cell against a sweep of x and shrink the two
    // node values of any cell that overshoots; shrinking keeps earlier
    // cells sound.
    let xs: Vec<f64> = (0..=16).map(|i| set.lo + (set.hi - set.lo) * i as f64 / 16.0).collect();
    for j in 0..grid_points {
        let mut worst: f64 = 1.0;
        for t in [0.25, 0.5, 0.75] {
            let v = nu_raw[j] * (1.0 - t) + nu_raw[j + 1] * t;
            if v <= 0.0 {
                continue;
            }
            let u = nodes[j] + t * (nodes[j + 1] - nodes[j]);
            for &x in &xs {
                worst = worst.min(kernel.density(u, x) / v);
            }
        }
        if worst < 1.0 - SOUNDNESS_SLACK {
            nu_raw[j] *= worst;
            nu_raw[j + 1] *= worst;
        }
    }
    let mut cdf = vec![0.0; nodes.len()];
    for j in 0..grid_points {
        cdf[j + 1] = cdf[j] + 0.5 * (nu_raw[j] + nu_raw[j + 1]) * (nodes[j + 1] - nodes[j]);
    }
    let epsilon = cdf[grid_points];
    if !(epsilon >= EPSILON_FLOOR) {
        return Err(Error::WeakMinorization { epsilon });
    }
    for c in cdf.iter_mut() {
        *c /= epsilon;
    }
    cdf[grid_points] = 1.0;
    Ok(Minorization { set, epsilon, kernel, nodes, nu_raw, cdf, lag })
}

/// Markov coordinate of a model: the value [`Chain::state`] reports.
fn markov_coordinate_sample(model: &ModelSpec, steps: usize, seed: u64) -> Vec<f64> {
    let mut chain = Chain::new(model, StreamKey::new(seed, 0).substream(tag::PROBE));
    (0..steps)
        .map(|_| {
            chain.step();
            chain.state()
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q) as usize;
    sorted[i]
}

/// Default small set. Candidates are centred at the pilot median with
/// half-widths a multiple of the IQR (in logs for positive chains, which
/// minorize multiplicatively); the one maximizing the pilot estimate of the
/// regeneration rate `π(C) ε` wins.
pub fn default_small_set(model: &ModelSpec, seed: u64) -> Result<SmallSet> {
    model.validate_dynamics()?;
    let kernel = Kernel::for_model(model)?;
    let positive = matches!(kernel, Kernel::LogFactor { .. } | Kernel::Variance { .. });
    let mut v = markov_coordinate_sample(model, 100_000, seed);
    if positive {
        if v.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Degenerate("positive chain visited 0".into()));
        }
        v.iter_mut().for_each(|x| *x = log(*x));
    }
    v.sort_by(f64::total_cmp);
    let (q25, q50, q75) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q75 - q25;
    if !(iqr > 0.0) {
        return Err(Error::Degenerate("pilot run has no spread".into()));
    }
    let mut best: Option<(f64, SmallSet)> = None;
    for w in [0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0] {
        let (lo, hi) = (q50 - w * iqr, q50 + w * iqr);
        let inside = v.partition_point(|x| *x <= hi) - v.partition_point(|x| *x < lo);
        let set = if positive { SmallSet { lo: libm::exp(lo), hi: libm::exp(hi) } } else { SmallSet { lo, hi } };
        let eps = match build_minorization(model, set, 512) {
            Ok(m) => m.epsilon,
            Err(Error::WeakMinorization { .. }) => continue,
            Err(e) => return Err(e),
        };
        let score = eps * inside as f64 / v.len() as f64;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, set));
        }
    }
    best.map(|(_, s)| s).ok_or(Error::WeakMinorization { epsilon: 0.0 })
}

/// Split-chain stepper: the unsplit chain plus a regeneration coin.
pub struct SplitChain<'a> {
    chain: Chain<'a>,
    minor: &'a Minorization,
    coin: StreamRng,
}

impl<'a> SplitChain<'a> {
    pub fn new(model: &'a ModelSpec, minor: &'a Minorization, key: StreamKey) -> Self {
        SplitChain { chain: Chain::new(model, key), minor, coin: key.substream(tag::COIN).rng() }
    }

    /// Emit `X_t`, whether the transition regenerated, and its probability.
    #[inline]
    pub fn step(&mut self) -> (f64, bool, f64) {
        let x = self.chain.step();
        let p = self.minor.regen_probability(self.chain.last());
        let hit = if p > 0.0 { uniform(&mut self.coin) < p } else { false };
        (x, hit, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Block {
    pub start: usize,
    pub len: usize,
    pub sum: f64,
}

/// Path split at regeneration times.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleSet {
    pub path: Vec<f64>,
    /// Observations before the first cycle; `len + 1` is `τ_A`.
    pub first_block: Block,
    pub cycles: Vec<Block>,
    /// Tail after the last complete cycle.
    pub residual: Block,
    pub n_covered: usize,
    pub regenerations: usize,
}

fn sequential_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in xs {
        s += v;
    }
    s
}

impl CycleSet {
    fn from_starts(path: Vec<f64>, starts: &[usize]) -> Self {
        let n = path.len();
        let block = |start: usize, end: usize| Block { start, len: end - start, sum: sequential_sum(&path[start..end]) };
        let (first_block, cycles, residual) = if starts.is_empty() {
            (block(0, n), Vec::new(), block(n, n))
        } else {
            let first = block(0, starts[0]);
            let cycles = starts.windows(2).map(|w| block(w[0], w[1])).collect();
            (first, cycles, block(*starts.last().unwrap(), n))
        };
        CycleSet { first_block, cycles, residual, n_covered: n, regenerations: starts.len(), path }
    }

    /// Segments in order: first block, cycles, residual.
    pub fn segments(&self) -> impl Iterator<Item = &Block> {
        core::iter::once(&self.first_block).chain(self.cycles.iter()).chain(core::iter::once(&self.residual))
    }

    /// Lengths cover the path, stored sums match recomputed sums bit for
    /// bit, and the concatenated segments are the path.
    pub fn verify(&self) -> bool {
        let mut next = 0;
        let mut rebuilt = Vec::with_capacity(self.n_covered);
        for b in self.segments() {
            if b.start != next {
                return false;
            }
            let seg = &self.path[b.start..b.start + b.len];
            if sequential_sum(seg).to_bits() != b.sum.to_bits() {
                return false;
            }
            rebuilt.extend_from_slice(seg);
            next += b.len;
        }
        next == self.n_covered
            && rebuilt.iter().zip(&self.path).all(|(a, b)| a.to_bits() == b.to_bits())
            && sequential_sum(&rebuilt).to_bits() == sequential_sum(&self.path).to_bits()
    }

    pub fn tau_a(&self) -> Option<usize> {
        (self.regenerations > 0).then_some(self.first_block.len + 1)
    }
}

/// Run the split chain for `n` steps on replication stream `(seed, stream)`.
pub fn simulate_split_chain(
    model: &ModelSpec,
    minor: &Minorization,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<CycleSet> {
    model.validate_dynamics()?;
    if n == 0 {
        return input("path length must be positive");
    }
    let mut sc = SplitChain::new(model, minor, StreamKey::new(seed, stream));
    let mut path = Vec::with_capacity(n);
    let mut starts = Vec::new();
    for t in 0..n {
        let (x, hit, _) = sc.step();
        path.push(x);
        if hit && t + minor.lag < n {
            starts.push(t + minor.lag);
        }
    }
    Ok(CycleSet::from_starts(path, &starts))
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TauTail {
    pub n: usize,
    pub prob: f64,
    /// Wilson upper bound; the usable value when no chain survived.
    pub upper: f64,
    pub hits: u64,
    pub reps: u64,
    pub zero_hits: bool,
}

/// `P(τ_A > n)` from stationary starts.
pub fn tau_a_tail<E: Executor>(
    model: &ModelSpec,
    minor: &Minorization,
    n: usize,
    reps: usize,
    seed: u64,
    exec: &E,
) -> Result<TauTail> {
    model.validate_dynamics()?;
    if n == 0 || reps == 0 {
        return input("tau tail needs n and reps positive");
    }
    let survived: u64 = exec
        .map(block_count(reps), |b| {
            let mut c = 0u64;
            for rep in block_range(b, reps) {
                let mut sc = SplitChain::new(model, minor, StreamKey::new(seed, rep as u64));
                let mut alive = true;
                for t in 0..n {
                    let (_, hit, _) = sc.step();
                    if hit && t + minor.lag < n {
                        alive = false;
                        break;
                    }
                }
                c += alive as u64;
            }
            c
        })
        .into_iter()
        .sum();
    let (_, upper) = wilson(survived, reps as u64, Z95);
    Ok(TauTail {
        n,
        prob: survived as f64 / reps as f64,
        upper,
        hits: survived,
        reps: reps as u64,
        zero_hits: survived == 0,
    })
}

// ---------------------------------------------------------------------------
// Regeneration form of the large deviation principle

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RegenParams {
    pub n_grid: Vec<usize>,
    pub x_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Length of the independent path behind `π̂`.
    pub pi_steps: usize,
}

impl Default for RegenParams {
    fn default() -> Self {
        RegenParams { n_grid: vec![1000], x_grid: Vec::new(), reps: 20_000, seed: 1, pi_steps: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegenRow {
    pub n: usize,
    pub x: f64,
    /// Table (i): `P̂_A(S_A > x) / P(|X| > x)`.
    pub cycle_ratio: f64,
    pub cycle_se: f64,
    pub cycle_hits: u64,
    /// `Ê τ_A · b₊`.
    pub cycle_ref: f64,
    /// Table (ii): `P̂(S_n > x) / (n P̂_A(S_A > x))`.
    pub int_ratio: f64,
    /// `1 / Ê τ_A`.
    pub int_ref: f64,
    /// Direct ratio `P̂(S_n > x) / (n P(|X| > x))` on the same paths.
    pub direct_ratio: f64,
    pub direct_hits: u64,
    /// Table (iii): `r̂(x) = P̂(S_n > x, τ_A > n) / (n P(|X| > x))`.
    pub remainder: f64,
    /// `P̂(τ_A > n) / (n P(|X| > x))`.
    pub remainder_bound: f64,
}

impl RegenRow {
    /// (ii) × (i) equals the direct ratio.
    pub fn identity_error(&self) -> f64 {
        fabs(self.int_ratio * self.cycle_ratio - self.direct_ratio)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegenReport {
    pub set: SmallSet,
    pub epsilon: f64,
    pub rows: Vec<RegenRow>,
    pub cycles: u64,
    pub tau_mean: f64,
    pub tau_mean_halfwidth: f64,
    /// Regeneration rate from the coin probabilities of an independent path.
    pub pi_hat: f64,
    pub pi_halfwidth: f64,
    /// `Ê τ_A · π̂`, 1 by Kac's formula.
    pub kac: f64,
    pub kac_halfwidth: f64,
    pub tau_tail: Vec<TauTail>,
    pub notes: Vec<String>,
}

impl RegenReport {
    /// Plateau of table (i) divided by `Ê τ_A b₊`.
    pub fn cycle_plateau(&self, n: usize) -> Result<(f64, f64)> {
        let pts: Vec<CurvePoint> = self
            .rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| CurvePoint {
                x: r.x,
                hits: r.cycle_hits as i64,
                reps: self.cycles,
                denom: 1.0,
                ratio: r.cycle_ratio / r.cycle_ref,
                se: r.cycle_se / r.cycle_ref,
            })
            .collect();
        plateau(&pts)
    }

    pub fn kac_within(&self, widths: f64) -> bool {
        fabs(self.kac - 1.0) <= widths * self.kac_halfwidth
    }
}

struct RegenAcc {
    cycle_hits: Vec<u64>,
    direct: Vec<u64>,
    remainder: Vec<u64>,
    cycles: u64,
    cycle_lens: Vec<u32>,
    survived: u64,
}

/// Tables (i)–(iii) of the regeneration form, plus the Kac check.
pub fn verify_regeneration_ldp<E: Executor>(
    model: &ModelSpec,
    minor: &Minorization,
    tail: &MarginalTail,
    mean: f64,
    b_plus: f64,
    params: &RegenParams,
    exec: &E,
) -> Result<RegenReport> {
    model.validate()?;
    if !(b_plus > 0.0) {
        return input("the regeneration form needs b+ > 0");
    }
    if params.x_grid.is_empty() || params.n_grid.is_empty() || params.reps < stats::BATCHES {
        return input("regeneration check needs x and n grids and at least 32 replications");
    }
    let denoms: Vec<f64> = params.x_grid.iter().map(|&x| tail.prob(x).map(|t| t.prob)).collect::<Result<_>>()?;
    let nx = params.x_grid.len();
    let mut rows = Vec::new();
    let mut tau_tail = Vec::new();
    let mut all_lens: Vec<f64> = Vec::new();
    let mut total_cycles = 0u64;
    let mut notes = Vec::new();
    for (ni, &n) in params.n_grid.iter().enumerate() {
        let seed = StreamKey::phase(params.seed, ni as u64);
        let accs = exec.map(block_count(params.reps), |b| {
            let mut acc = RegenAcc {
                cycle_hits: vec![0; nx],
                direct: vec![0; nx],
                remainder: vec![0; nx],
                cycles: 0,
                cycle_lens: Vec::new(),
                survived: 0,
            };
            for rep in block_range(b, params.reps) {
                let mut sc = SplitChain::new(model, minor, StreamKey::new(seed, rep as u64));
                let mut s = 0.0;
                let mut cyc = 0.0;
                let mut cyc_len = 0usize;
                let mut started = false;
                for t in 0..n {
                    let (x, hit, _) = sc.step();
                    let xc = x - mean;
                    // A transition at t opens a cycle at t + lag.
                    let opens_now = hit && minor.lag == 0;
                    if opens_now {
                        close_cycle(&mut acc, &params.x_grid, started, cyc, cyc_len);
                        started = true;
                        cyc = 0.0;
                        cyc_len = 0;
                    }
                    s += xc;
                    cyc += xc;
                    cyc_len += 1;
                    if hit && minor.lag == 1 && t + 1 < n {
                        close_cycle(&mut acc, &params.x_grid, started, cyc, cyc_len);
                        started = true;
                        cyc = 0.0;
                        cyc_len = 0;
                    }
                }
                let alive = !started;
                acc.survived += alive as u64;
                for (i, &x) in params.x_grid.iter().enumerate() {
                    let over = s > x;
                    acc.direct[i] += over as u64;
                    acc.remainder[i] += (over && alive) as u64;
                }
            }
            acc
        });
        let mut cycle_hits = vec![0u64; nx];
        let mut direct = vec![0u64; nx];
        let mut remainder = vec![0u64; nx];
        let mut cycles = 0u64;
        let mut survived = 0u64;
        let mut lens: Vec<f64> = Vec::new();
        for a in &accs {
            for i in 0..nx {
                cycle_hits[i] += a.cycle_hits[i];
                direct[i] += a.direct[i];
                remainder[i] += a.remainder[i];
            }
            cycles += a.cycles;
            survived += a.survived;
            lens.extend(a.cycle_lens.iter().map(|&l| l as f64));
        }
        if cycles == 0 {
            return Err(Error::Power(format!("no complete cycles for n = {n}")));
        }
        if cycle_hits.iter().all(|h| *h == 0) {
            return Err(Error::Power(format!("zero cycle-sum exceedances at every x for n = {n}")));
        }
        let tau_mean = stats::mean(&lens);
        let r = params.reps as f64;
        let nf = n as f64;
        let p_tau = survived as f64 / r;
        tau_tail.push(TauTail {
            n,
            prob: p_tau,
            upper: wilson(survived, params.reps as u64, Z95).1,
            hits: survived,
            reps: params.reps as u64,
            zero_hits: survived == 0,
        });
        for i in 0..nx {
            let d = denoms[i];
            let pa = cycle_hits[i] as f64 / cycles as f64;
            let pn = direct[i] as f64 / r;
            rows.push(RegenRow {
                n,
                x: params.x_grid[i],
                cycle_ratio: pa / d,
                cycle_se: sqrt(pa * (1.0 - pa) / cycles as f64) / d,
                cycle_hits: cycle_hits[i],
                cycle_ref: tau_mean * b_plus,
                int_ratio: if pa > 0.0 { pn / (nf * pa) } else { f64::NAN },
                int_ref: 1.0 / tau_mean,
                direct_ratio: pn / (nf * d),
                direct_hits: direct[i],
                remainder: remainder[i] as f64 / r / (nf * d),
                remainder_bound: p_tau / (nf * d),
            });
        }
        if cycle_hits.contains(&0) {
            notes.push(format!("n = {n}: some x have no cycle exceedances; table (ii) is undefined there"));
        }
        total_cycles += cycles;
        all_lens.extend(lens);
    }
    let bl = batch_means(&all_lens)?;
    let pi = regeneration_rate(model, minor, params.pi_steps, StreamKey::phase(params.seed, 0x9e11))?;
    let kac = bl.mean * pi.mean;
    let rel = sqrt((bl.se / bl.mean) * (bl.se / bl.mean) + (pi.se / pi.mean) * (pi.se / pi.mean));
    notes.push(String::from("cycles are those completed inside each window; windows start from stationarity"));
    if minor.lag == 1 {
        notes.push(String::from("GARCH cycles are 1-dependent: the regenerated variance shares Z with the previous observation"));
    }
    Ok(RegenReport {
        set: minor.set,
        epsilon: minor.epsilon,
        rows,
        cycles: total_cycles,
        tau_mean: bl.mean,
        tau_mean_halfwidth: bl.halfwidth(),
        pi_hat: pi.mean,
        pi_halfwidth: pi.halfwidth(),
        kac,
        kac_halfwidth: Z95 * kac * rel,
        tau_tail,
        notes,
    })
}

fn close_cycle(acc: &mut RegenAcc, xs: &[f64], started: bool, sum: f64, len: usize) {
    if !started || len == 0 {
        return;
    }
    acc.cycles += 1;
    acc.cycle_lens.push(len as u32);
    for (i, &x) in xs.iter().enumerate() {
        acc.cycle_hits[i] += (sum > x) as u64;
    }
}

/// Mean regeneration probability per step along one stationary path, with
/// a batch-means interval.
pub fn regeneration_rate(
    model: &ModelSpec,
    minor: &Minorization,
    steps: usize,
    seed: u64,
) -> Result<stats::BatchMean> {
    let mut sc = SplitChain::new(model, minor, StreamKey::new(seed, 0));
    let probs: Vec<f64> = (0..steps).map(|_| sc.step().2).collect();
    batch_means(&probs)
}

// ---------------------------------------------------------------------------
// Drift

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DriftParams {
    pub probe_reps: usize,
    /// Probe states; stationary quantiles plus extremes when empty.
    pub probes: Vec<f64>,
    /// Probes inside this set are treated as atom states (the `b` term).
    pub atom_proxy: Option<SmallSet>,
    pub seed: u64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams { probe_reps: 20_000, probes: Vec::new(), atom_proxy: None, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftReport {
    pub report: ConditionReport,
    pub beta: f64,
    pub beta_se: f64,
    pub b: f64,
}

impl DriftReport {
    pub fn ci_contains(&self, v: f64, widths: f64) -> bool {
        fabs(self.beta - v) <= widths * self.beta_se
    }
}

/// `h` of the Markov coordinate: `σ` for GARCH, the coordinate otherwise.
fn drift_h(model: &ModelSpec, state: f64) -> f64 {
    match model.variant {
        Variant::Garch11 { .. } => sqrt(state.max(0.0)),
        _ => state,
    }
}

fn default_probes(model: &ModelSpec, seed: u64) -> Vec<f64> {
    let mut v = markov_coordinate_sample(model, 100_000, seed);
    v.sort_by(|a, b| fabs(*a).total_cmp(&fabs(*b)));
    let mut probes: Vec<f64> = [0.5, 0.75, 0.9, 0.95, 0.99, 0.999]
        .iter()
        .map(|&q| fabs(quantile(&v, q)))
        .collect();
    let top = probes.last().copied().unwrap_or(1.0).max(1e-12);
    probes.extend([10.0, 100.0, 1000.0, 1e4].iter().map(|f| f * top));
    probes
}

/// Polynomial drift `E(|h(Φ₁)|^p | Φ₀ = y) ≤ β |h(y)|^p + b 1_A(y)`: OLS slope
/// over non-atom probes with a sandwich error; passes iff `β̂ + 3 se < 1`.
pub fn check_drift<E: Executor>(
    model: &ModelSpec,
    p_grid: &[f64],
    params: &DriftParams,
    exec: &E,
) -> Result<Vec<DriftReport>> {
    model.validate_dynamics()?;
    if matches!(model.variant, Variant::Iid { .. } | Variant::Ma { .. }) {
        return Err(Error::Unsupported("drift needs a Markov coordinate".into()));
    }
    if p_grid.is_empty() || p_grid.iter().any(|p| !(*p > 0.0)) {
        return input("p grid must be positive");
    }
    if params.probe_reps < stats::BATCHES {
        return input("drift needs at least 32 draws per probe");
    }
    let probes = if params.probes.is_empty() { default_probes(model, params.seed) } else { params.probes.clone() };
    let outside: Vec<f64> = probes
        .iter()
        .copied()
        .filter(|y| params.atom_proxy.is_none_or(|s| !s.contains(*y)))
        .collect();
    if outside.len() < 3 {
        return input("drift needs at least three probes outside the atom proxy");
    }
    let inside: Vec<f64> = probes.iter().copied().filter(|y| !outside.contains(y)).collect();
    let mut reports = Vec::new();
    for (pi, &p) in p_grid.iter().enumerate() {
        let moments = |y: f64, which: u64| -> Result<(f64, f64)> {
            let seed = StreamKey::phase(params.seed, (pi as u64) << 32 | which);
            let vals = collect_reps(exec, params.probe_reps, |rep| {
                let mut c = Chain::with_state(model, StreamKey::new(seed, rep as u64), y);
                c.step();
                pow(fabs(drift_h(model, c.state())), p)
            });
            let bm = batch_means(&vals)?;
            Ok((bm.mean, bm.se * bm.se))
        };
        let mut hx = Vec::new();
        let mut my = Vec::new();
        let mut var = Vec::new();
        let mut trace = Vec::new();
        for (j, &y) in outside.iter().enumerate() {
            let (m, v) = moments(y, j as u64)?;
            hx.push(pow(fabs(drift_h(model, y)), p));
            my.push(m);
            var.push(v);
            trace.push(TracePoint { x: y, value: m, count: params.probe_reps as u64, trials: params.probe_reps as u64 });
        }
        let fit = line_known_variance(&hx, &my, &var)?;
        let beta = fit.slope;
        let mut b: f64 = fit.intercept.max(0.0);
        for (j, &y) in inside.iter().enumerate() {
            let (m, _) = moments(y, (outside.len() + j) as u64)?;
            b = b.max(m - beta * pow(fabs(drift_h(model, y)), p));
        }
        let stat = beta + 3.0 * fit.slope_se;
        let mut report = ConditionReport::new(ConditionTag::Drift, pi, stat, 1.0);
        report.pass = stat < 1.0;
        report.p = Some(p);
        report.trace = trace;
        reports.push(DriftReport { report, beta, beta_se: fit.slope_se, b });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::math::{integrate, normal_cdf};
    use crate::rv::TailSpec;

    fn ar1_gauss(phi: f64) -> ModelSpec {
        Variant::Ar1 { phi, noise: NoiseLaw::Gaussian { sd: 1.0 } }.into()
    }

    #[test]
    fn iid_chain_is_an_atom() {
        let m = ar1_gauss(0.0);
        let mi = build_minorization(&m, SmallSet::symmetric(1.0), GRID_CELLS).unwrap();
        assert_eq!(mi.epsilon, 1.0);
        let cs = simulate_split_chain(&m, &mi, 100, 3, 0).unwrap();
        assert_eq!(cs.regenerations, 100);
        assert!(cs.cycles.iter().all(|c| c.len == 1));
    }

    #[test]
    fn epsilon_matches_quadrature() {
        let m = ar1_gauss(0.5);
        let mi = build_minorization(&m, SmallSet::symmetric(1.0), GRID_CELLS).unwrap();
        // min of the two endpoint-shifted densities, on a fine grid.
        let f = |y: f64| libm::fmin(normal_pdf(y - 0.5), normal_pdf(y + 0.5));
        let quad = integrate(&f, -12.0, 0.0, 1e-13) + integrate(&f, 0.0, 12.0, 1e-13);
        assert!((mi.epsilon - quad).abs() < 1e-4, "{} vs {quad}", mi.epsilon);
        assert!((quad - 2.0 * normal_cdf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn shrinking_set_raises_epsilon() {
        let m = ar1_gauss(0.5);
        let e: Vec<f64> = [1.0, 0.3, 0.05, 0.001]
            .iter()
            .map(|&c| build_minorization(&m, SmallSet::symmetric(c), GRID_CELLS).unwrap().epsilon)
            .collect();
        assert!(e.windows(2).all(|w| w[1] > w[0]), "{e:?}");
        assert!(e[3] > 0.99);
    }

    #[test]
    fn weak_minorization_is_rejected() {
        let m = ar1_gauss(0.9);
        assert!(matches!(
            build_minorization(&m, SmallSet::symmetric(20.0), GRID_CELLS),
            Err(Error::WeakMinorization { .. })
        ));
    }

    #[test]
    fn nu_normalized_and_sampler_consistent() {
        let m = ar1_gauss(0.5);
        let mi = build_minorization(&m, SmallSet::symmetric(1.0), GRID_CELLS).unwrap();
        assert!((mi.cdf.last().unwrap() - 1.0).abs() < 1e-9);
        let mut rng = StreamKey::new(2, 0).rng();
        let n = 100_000;
        let below = (0..n).filter(|_| mi.sample_nu(&mut rng) < 0.3).count() as f64 / n as f64;
        let target = mi.nu_cdf(0.3);
        assert!((below - target).abs() < 4.0 * (target * (1.0 - target) / n as f64).sqrt());
    }

    #[test]
    fn split_path_equals_plain_path() {
        let m = ar1_gauss(0.5);
        let mi = build_minorization(&m, SmallSet::symmetric(1.0), 1024).unwrap();
        let cs = simulate_split_chain(&m, &mi, 5000, 9, 4).unwrap();
        let plain = crate::models::simulate(&m, 5000, 9, 4).unwrap();
        assert!(cs.path.iter().zip(&plain.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(cs.verify());
        assert!(cs.regenerations > 100);
    }

    #[test]
    fn recursion_and_garch_minorize() {
        let sre: ModelSpec = Variant::SreAffine {
            a: ALaw::lognormal_with_root(1.5, 0.5),
            b: NoiseLaw::Uniform { lo: 0.0, hi: 1.0 },
            alpha: 1.5,
        }
        .into();
        let set = default_small_set(&sre, 1).unwrap();
        let mi = build_minorization(&sre, set, 1024).unwrap();
        assert!(mi.epsilon > EPSILON_FLOOR && mi.epsilon <= 1.0);
        let cs = simulate_split_chain(&sre, &mi, 20_000, 1, 0).unwrap();
        assert!(cs.verify() && cs.regenerations > 10);
        let g = crate::models::garch_calibrated(1e-5, 0.12, 0.85, NoiseLaw::StudentT { dof: 6 }).unwrap();
        let gs = default_small_set(&g, 1).unwrap();
        let gm = build_minorization(&g, gs, 1024).unwrap();
        let cs = simulate_split_chain(&g, &gm, 20_000, 1, 0).unwrap();
        assert!(cs.verify() && cs.regenerations > 10, "{}", cs.regenerations);
    }

    #[test]
    fn ma_is_unsupported() {
        let noise = NoiseLaw::Pareto(TailSpec::pareto(1.5, 0.5).unwrap());
        let m: ModelSpec = Variant::Ma { theta: vec![0.5], noise }.into();
        assert!(matches!(build_minorization(&m, SmallSet::symmetric(1.0), 64), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ar1_drift_slope_is_phi() {
        let m = ar1_gauss(0.5);
        let params = DriftParams { probe_reps: 4000, probes: vec![5.0, 10.0, 20.0, 50.0, 100.0], ..DriftParams::default() };
        let r = check_drift(&m, &[1.0], &params, &Serial).unwrap();
        assert!(r[0].beta <= 0.5 + 3.0 * r[0].beta_se && r[0].beta > 0.45, "{:?}", r[0].beta);
        assert!(r[0].report.pass);
    }

    #[test]
    fn regeneration_tables_are_consistent() {
        let noise = NoiseLaw::SmoothedPareto(TailSpec::pareto(1.5, 0.5).unwrap());
        let m: ModelSpec = Variant::Ar1 { phi: 0.5, noise }.into();
        let set = default_small_set(&m, 2).unwrap();
        let mi = build_minorization(&m, set, 1024).unwrap();
        let tail = MarginalTail::closed(&m).unwrap();
        let b = crate::theory::b_plus_closed_form(&m).unwrap().unwrap();
        let params = RegenParams { n_grid: vec![200], x_grid: vec![100.0, 200.0], reps: 4000, seed: 5, pi_steps: 200_000 };
        let r = verify_regeneration_ldp(&m, &mi, &tail, 0.0, b, &params, &Serial).unwrap();
        assert!(r.kac_within(3.0), "kac {} ± {}", r.kac, r.kac_halfwidth);
        for row in &r.rows {
            assert!(row.identity_error() < 1e-12 * row.direct_ratio.max(1.0));
            assert!(row.remainder <= row.remainder_bound + 1e-15);
        }
        let t = tau_a_tail(&m, &mi, 20, 2000, 1, &Serial).unwrap();
        let t2 = tau_a_tail(&m, &mi, 40, 2000, 1, &Serial).unwrap();
        assert!(t2.prob <= t.prob);
    }
}
