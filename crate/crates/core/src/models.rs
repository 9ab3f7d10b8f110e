//! The stationary model zoo.
//!
//! Every model is driven by a [`Chain`], a stepper that holds the Markov
//! state and the random streams of one replication. Path simulation, the
//! conditional samplers and the split chains all step the same code, so a
//! split chain reproduces [`simulate`] bit for bit.
//!
//! Stream layout per replication key: the main stream feeds the innovation
//! of each step (`Z_t`, `B_t`, `D_t`), `FACTOR` feeds `A_t`, `LETAC_C` feeds
//! `C_t` or the volatility shocks, and `INIT` feeds the stationary start.
//! This is what makes the degenerate members (`φ = 0`, `θ = 0`, `A ≡ 0`)
//! reproduce the IID variant exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, fabs, log, pow, sqrt};
use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::math::{self, bisect, integrate_half_line};
use crate::noise::NoiseLaw;
use crate::rng::{standard_normal, tag, StreamKey, StreamRng};

/// Backward iteration stops once the running product falls below this.
pub const SERIES_TOL: f64 = 1e-12;
/// Hard cap on backward-iteration terms.
pub const SERIES_CAP: usize = 10_000;
/// Tolerance for the declared Kesten root.
pub const KESTEN_TOL: f64 = 1e-6;

/// Law of the multiplicative factor `A` of a random recursion.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "law", rename_all = "snake_case"))]
pub enum ALaw {
    /// `A = exp(mu + sigma N)`.
    LogNormal { mu: f64, sigma: f64 },
    /// Deterministic factor in `[0, 1)`; degenerate sanity cases only.
    Constant { value: f64 },
    /// `A = alpha1 Z² + beta1`, the GARCH volatility factor.
    SquaredNoise { alpha1: f64, beta1: f64, noise: NoiseLaw },
}

impl ALaw {
    /// Lognormal factor whose Kesten root is exactly `alpha`.
    pub fn lognormal_with_root(alpha: f64, sigma: f64) -> ALaw {
        ALaw::LogNormal { mu: -0.5 * alpha * sigma * sigma, sigma }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            ALaw::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    v.push(format!("lognormal mu must be finite, got {mu}"));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    v.push(format!("lognormal sigma must be positive, got {sigma}"));
                }
            }
            ALaw::Constant { value } => {
                if !(0.0..1.0).contains(value) {
                    v.push(format!("constant factor must lie in [0, 1), got {value}"));
                }
            }
            ALaw::SquaredNoise { alpha1, beta1, noise } => {
                if !(alpha1.is_finite() && *alpha1 >= 0.0) {
                    v.push(format!("alpha1 must be nonnegative, got {alpha1}"));
                }
                if !(0.0..1.0).contains(beta1) {
                    v.push(format!("beta1 must lie in [0, 1), got {beta1}"));
                }
                v.extend(noise.violations());
            }
        }
        v
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ALaw::LogNormal { mu, sigma } => exp(mu + sigma * standard_normal(rng)),
            ALaw::Constant { value } => *value,
            ALaw::SquaredNoise { alpha1, beta1, noise } => {
                let z = noise.sample(rng);
                alpha1 * z * z + beta1
            }
        }
    }

    pub fn is_random(&self) -> bool {
        match self {
            ALaw::Constant { .. } => false,
            ALaw::SquaredNoise { alpha1, .. } => *alpha1 > 0.0,
            ALaw::LogNormal { .. } => true,
        }
    }

    /// `E g(A)` for the squared-noise factor by quadrature over `Z`.
    fn squared_expectation<G: Fn(f64) -> f64>(alpha1: f64, beta1: f64, noise: &NoiseLaw, g: G) -> f64 {
        match noise {
            NoiseLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(z, p)| p * g(alpha1 * z * z + beta1))
                .sum(),
            NoiseLaw::Constant { value } => g(alpha1 * value * value + beta1),
            law => {
                let f = |z: f64| {
                    let d = law.density(z).unwrap_or(0.0) + law.density(-z).unwrap_or(0.0);
                    if d == 0.0 {
                        0.0
                    } else {
                        d * g(alpha1 * z * z + beta1)
                    }
                };
                integrate_half_line(&f, 1e-13)
            }
        }
    }

    /// `E A^κ`.
    pub fn moment(&self, kappa: f64) -> f64 {
        match self {
            ALaw::LogNormal { mu, sigma } => exp(kappa * mu + 0.5 * kappa * kappa * sigma * sigma),
            ALaw::Constant { value } => pow(*value, kappa),
            ALaw::SquaredNoise { alpha1, beta1, noise } => {
                Self::squared_expectation(*alpha1, *beta1, noise, |a| pow(a, kappa))
            }
        }
    }

    /// `E A^κ ln A`, the derivative of the moment function.
    pub fn moment_log(&self, kappa: f64) -> f64 {
        match self {
            ALaw::LogNormal { mu, sigma } => (mu + kappa * sigma * sigma) * self.moment(kappa),
            ALaw::Constant { value } => {
                if *value == 0.0 {
                    0.0
                } else {
                    pow(*value, kappa) * log(*value)
                }
            }
            ALaw::SquaredNoise { alpha1, beta1, noise } => Self::squared_expectation(*alpha1, *beta1, noise, |a| {
                if a > 0.0 {
                    pow(a, kappa) * log(a)
                } else {
                    0.0
                }
            }),
        }
    }

    /// `E ln A` (may be `-∞`).
    pub fn log_mean(&self) -> f64 {
        match self {
            ALaw::LogNormal { mu, .. } => *mu,
            ALaw::Constant { value } => log(*value),
            ALaw::SquaredNoise { alpha1, beta1, noise } => {
                if *beta1 == 0.0 && *alpha1 == 0.0 {
                    return f64::NEG_INFINITY;
                }
                Self::squared_expectation(*alpha1, *beta1, noise, log)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0)
    }

    /// Positive root of `E A^κ = 1` by bisection on `ln E A^κ`.
    pub fn kesten_root(&self) -> Option<f64> {
        if !self.is_random() || !(self.log_mean() < 0.0) {
            return None;
        }
        let f = |k: f64| log(self.moment(k));
        let mut hi = 1.0;
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 256.0 {
                return None;
            }
        }
        bisect(f, 1e-9, hi, 1e-12)
    }

    /// Monte Carlo `E A^κ` over a fixed common-random-number sample of `A`.
    pub fn moment_mc(draws: &[f64], kappa: f64) -> f64 {
        let v: Vec<f64> = draws.iter().map(|a| pow(*a, kappa)).collect();
        crate::stats::mean(&v)
    }
}

/// The model zoo.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum Variant {
    Iid {
        noise: NoiseLaw,
    },
    /// `X_t = Z_t + Σ_j θ_j Z_{t-j}`.
    Ma {
        theta: Vec<f64>,
        noise: NoiseLaw,
    },
    Ar1 {
        phi: f64,
        noise: NoiseLaw,
    },
    /// `X_t = A_t X_{t-1} + B_t`.
    SreAffine {
        a: ALaw,
        b: NoiseLaw,
        alpha: f64,
    },
    /// `X_t = max(A_t X_{t-1}, B_t)`.
    SreMax {
        a: ALaw,
        b: NoiseLaw,
        alpha: f64,
    },
    /// `X_t = A_t max(C_t, X_{t-1}) + D_t`.
    Letac {
        a: ALaw,
        c: NoiseLaw,
        d: NoiseLaw,
        alpha: f64,
    },
    /// `X_t = exp(Y_t) Z_t` with `Y_t = a Y_{t-1} + sigma_eta η_t`.
    Sv {
        a: f64,
        sigma_eta: f64,
        noise: NoiseLaw,
    },
    /// `X_t = σ_t Z_t`, `σ²_{t+1} = α₀ + (α₁ Z_t² + β₁) σ_t²`.
    Garch11 {
        alpha0: f64,
        alpha1: f64,
        beta1: f64,
        noise: NoiseLaw,
        alpha: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub variant: Variant,
    /// Emit `-X_t` instead of `X_t`; used for left-tail constants.
    #[cfg_attr(feature = "serde", serde(default))]
    pub reflected: bool,
}

impl From<Variant> for ModelSpec {
    fn from(variant: Variant) -> Self {
        ModelSpec { variant, reflected: false }
    }
}

/// Region rule for each variant.
pub fn default_rule_name(v: &Variant) -> &'static str {
    match v {
        Variant::Iid { .. } => "nagaev_iid",
        Variant::Ma { .. } => "m0_dep",
        Variant::Ar1 { .. } => "markov_atom",
        Variant::SreAffine { .. } | Variant::SreMax { .. } | Variant::Letac { .. } => "sre",
        Variant::Sv { .. } => "sv",
        Variant::Garch11 { .. } => "garch",
    }
}

impl ModelSpec {
    pub fn iid(noise: NoiseLaw) -> Self {
        Variant::Iid { noise }.into()
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            Variant::Iid { .. } => "iid",
            Variant::Ma { .. } => "ma",
            Variant::Ar1 { .. } => "ar1",
            Variant::SreAffine { .. } => "sre_affine",
            Variant::SreMax { .. } => "sre_max",
            Variant::Letac { .. } => "letac",
            Variant::Sv { .. } => "sv",
            Variant::Garch11 { .. } => "garch11",
        }
    }

    pub fn mirrored(&self) -> Self {
        ModelSpec { variant: self.variant.clone(), reflected: !self.reflected }
    }

    /// Tail index of the marginal; `None` for light-tailed members.
    pub fn alpha(&self) -> Option<f64> {
        match &self.variant {
            Variant::Iid { noise } | Variant::Ma { noise, .. } | Variant::Ar1 { noise, .. } | Variant::Sv { noise, .. } => {
                noise.tail_index()
            }
            Variant::SreAffine { alpha, .. } | Variant::SreMax { alpha, .. } | Variant::Letac { alpha, .. } => Some(*alpha),
            Variant::Garch11 { alpha, .. } => Some(*alpha),
        }
    }

    /// Mean correction applies iff `E|X| < ∞`.
    pub fn centered(&self) -> bool {
        self.alpha().is_none_or(|a| a > 1.0)
    }

    /// Kesten-type factor law of the Markov coordinate, if any.
    pub fn factor(&self) -> Option<ALaw> {
        match &self.variant {
            Variant::SreAffine { a, .. } | Variant::SreMax { a, .. } | Variant::Letac { a, .. } => Some(a.clone()),
            Variant::Garch11 { alpha1, beta1, noise, .. } => Some(ALaw::SquaredNoise {
                alpha1: *alpha1,
                beta1: *beta1,
                noise: noise.clone(),
            }),
            _ => None,
        }
    }

    /// Invariants needed to simulate: parameters finite and the recursion
    /// contractive.
    pub fn dynamic_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match &self.variant {
            Variant::Iid { noise } => v.extend(noise.violations()),
            Variant::Ma { theta, noise } => {
                v.extend(noise.violations());
                if theta.is_empty() {
                    v.push("ma needs at least one coefficient".into());
                }
                if theta.iter().any(|t| !t.is_finite()) {
                    v.push("ma coefficients must be finite".into());
                }
            }
            Variant::Ar1 { phi, noise } => {
                v.extend(noise.violations());
                if !(fabs(*phi) < 1.0) {
                    v.push(format!("ar1 needs |phi| < 1, got {phi}"));
                }
            }
            Variant::SreAffine { a, b, .. } | Variant::SreMax { a, b, .. } => {
                v.extend(a.violations());
                v.extend(b.violations());
                if a.violations().is_empty() && !(a.log_mean() < 0.0) {
                    v.push("recursion is not contractive: E log A must be negative".into());
                }
            }
            Variant::Letac { a, c, d, .. } => {
                v.extend(a.violations());
                v.extend(c.violations());
                v.extend(d.violations());
                if a.violations().is_empty() && !(a.log_mean() < 0.0) {
                    v.push("recursion is not contractive: E log A must be negative".into());
                }
            }
            Variant::Sv { a, sigma_eta, noise } => {
                v.extend(noise.violations());
                if !(fabs(*a) < 1.0) {
                    v.push(format!("sv needs |a| < 1, got {a}"));
                }
                if !(sigma_eta.is_finite() && *sigma_eta >= 0.0) {
                    v.push(format!("sv sigma_eta must be nonnegative, got {sigma_eta}"));
                }
            }
            Variant::Garch11 { alpha0, alpha1, beta1, noise, .. } => {
                v.extend(noise.violations());
                if !(alpha0.is_finite() && *alpha0 > 0.0) {
                    v.push(format!("garch alpha0 must be positive, got {alpha0}"));
                }
                if !(alpha1.is_finite() && *alpha1 >= 0.0) {
                    v.push(format!("garch alpha1 must be nonnegative, got {alpha1}"));
                }
                if !(0.0..1.0).contains(beta1) {
                    v.push(format!("garch beta1 must lie in [0, 1), got {beta1}"));
                }
                if v.is_empty() {
                    let f = self.factor().unwrap();
                    if !(f.log_mean() < 0.0) {
                        v.push("garch is not contractive: E log(alpha1 Z^2 + beta1) must be negative".into());
                    }
                }
            }
        }
        v
    }

    /// Every model invariant, including declared Kesten roots and the
    /// moment conditions used by the limit constants.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.dynamic_violations();
        if !v.is_empty() {
            return v;
        }
        let kesten = |a: &ALaw, alpha: f64, label: &str, v: &mut Vec<String>| {
            if !(alpha.is_finite() && alpha > 0.0) {
                v.push(format!("{label}: declared alpha must be positive, got {alpha}"));
                return;
            }
            if a.is_random() {
                let m = a.moment(alpha);
                if fabs(m - 1.0) > KESTEN_TOL {
                    v.push(format!("{label}: E A^alpha = {m} at the declared alpha = {alpha}, needs 1 within 1e-6"));
                }
            }
        };
        let lighter = |law: &NoiseLaw, alpha: f64, name: &str, v: &mut Vec<String>| {
            if let Some(b) = law.tail_index() {
                if b <= alpha {
                    v.push(format!("{name} must have a lighter tail than index {alpha}, got index {b}"));
                }
            }
        };
        match &self.variant {
            Variant::SreAffine { a, b, alpha } | Variant::SreMax { a, b, alpha } => {
                kesten(a, *alpha, self.name(), &mut v);
                if a.is_random() {
                    lighter(b, *alpha, "b", &mut v);
                }
            }
            Variant::Letac { a, c, d, alpha } => {
                kesten(a, *alpha, "letac", &mut v);
                lighter(c, *alpha, "c", &mut v);
                lighter(d, *alpha, "d", &mut v);
                if !d.is_nonnegative() {
                    v.push("letac needs D >= 0".into());
                }
            }
            Variant::Sv { noise, .. } => {
                if noise.tail_index().is_none() {
                    v.push("sv noise must be regularly varying".into());
                }
            }
            Variant::Garch11 { alpha1, noise, alpha, .. } => {
                if *alpha1 <= 0.0 {
                    v.push("garch alpha1 must be positive".into());
                }
                if !noise.is_symmetric() {
                    v.push("garch noise must be symmetric".into());
                }
                match noise.abs_moment(2.0) {
                    Some(m) if fabs(m - 1.0) < 1e-9 => {}
                    _ => v.push("garch noise must have unit variance".into()),
                }
                if v.is_empty() {
                    let f = self.factor().unwrap();
                    let m = f.moment(0.5 * alpha);
                    if fabs(m - 1.0) > KESTEN_TOL {
                        v.push(format!(
                            "garch: E(alpha1 Z^2 + beta1)^(alpha/2) = {m} at the declared alpha = {alpha}, needs 1 within 1e-6"
                        ));
                    }
                    if let Some(nu) = noise.tail_index() {
                        if nu <= *alpha {
                            v.push(format!("garch noise index {nu} must exceed alpha = {alpha}"));
                        }
                    }
                }
            }
            _ => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Model(v.join("; ")))
        }
    }

    pub fn validate_dynamics(&self) -> Result<()> {
        let v = self.dynamic_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Model(v.join("; ")))
        }
    }

    /// `E X` in closed form where one exists.
    pub fn mean_closed_form(&self) -> Option<f64> {
        let m = match &self.variant {
            Variant::Iid { noise } => noise.mean()?,
            Variant::Ma { theta, noise } => noise.mean()? * (1.0 + theta.iter().sum::<f64>()),
            Variant::Ar1 { phi, noise } => noise.mean()? / (1.0 - phi),
            Variant::SreAffine { a, b, .. } => {
                let ea = a.mean();
                if ea >= 1.0 {
                    return None;
                }
                b.mean()? / (1.0 - ea)
            }
            Variant::SreMax { .. } | Variant::Letac { .. } => return None,
            Variant::Sv { a, sigma_eta, noise } => {
                let var = sigma_eta * sigma_eta / (1.0 - a * a);
                exp(0.5 * var) * noise.mean()?
            }
            Variant::Garch11 { .. } => 0.0,
        };
        Some(if self.reflected { -m } else { m })
    }

    /// `C` in `P(|X| > x) ~ C x^{-α}` from closed forms; `None` where a
    /// Goldie constant is required.
    pub fn closed_tail_constant(&self) -> Option<f64> {
        match &self.variant {
            Variant::Iid { noise } => noise.tail_constant(),
            Variant::Ma { theta, noise } => {
                let a = noise.tail_index()?;
                let s: f64 = 1.0 + theta.iter().map(|t| pow(fabs(*t), a)).sum::<f64>();
                Some(noise.tail_constant()? * s)
            }
            Variant::Ar1 { phi, noise } => {
                let a = noise.tail_index()?;
                Some(noise.tail_constant()? / (1.0 - pow(fabs(*phi), a)))
            }
            Variant::Sv { a, sigma_eta, noise } => {
                let al = noise.tail_index()?;
                let var = sigma_eta * sigma_eta / (1.0 - a * a);
                Some(noise.tail_constant()? * exp(0.5 * al * al * var))
            }
            _ => None,
        }
    }

    /// Exact `P(|X| > x)` when the marginal is known in closed form.
    pub fn exact_abs_tail(&self, x: f64) -> Option<f64> {
        match &self.variant {
            Variant::Iid { noise } => noise.abs_tail(x),
            Variant::Sv { a, sigma_eta, noise: NoiseLaw::Pareto(t) } => {
                let var = sigma_eta * sigma_eta / (1.0 - a * a);
                if x <= 0.0 {
                    return Some(1.0);
                }
                let l = log(x / t.scale);
                if var == 0.0 {
                    return Some(t.tail(x));
                }
                let s = sqrt(var);
                let al = t.alpha;
                Some(math::normal_sf(l / s) + exp(-al * l + 0.5 * al * al * var) * math::normal_cdf((l - al * var) / s))
            }
            _ => None,
        }
    }
}

/// One simulated trajectory and its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub values: Vec<f64>,
    pub model: ModelSpec,
    pub seed: u64,
    pub stream_id: u64,
    pub burn_in_used: usize,
}

impl SamplePath {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Details of the last transition, read by the splitting machinery.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Step {
    /// Markov coordinate before the step.
    pub prev: f64,
    /// Realized factor: `φ`, `A_t`, or `α₁ Z_t² + β₁`.
    pub factor: f64,
    /// Letac's `C_t`, otherwise unused.
    pub aux: f64,
    /// Innovation of the main stream: `Z_t`, `B_t`, or `D_t`.
    pub innovation: f64,
    /// Markov coordinate after the step.
    pub state: f64,
}

/// Stateful stepper for one replication.
pub struct Chain<'m> {
    model: &'m ModelSpec,
    main: StreamRng,
    factor: StreamRng,
    aux: StreamRng,
    state: f64,
    ring: Vec<f64>,
    pos: usize,
    burn_in: usize,
    last: Step,
}

impl<'m> Chain<'m> {
    /// Start from the stationary law. Panics never; validate first.
    pub fn new(model: &'m ModelSpec, key: StreamKey) -> Self {
        let mut init = key.substream(tag::INIT).rng();
        let mut chain = Chain {
            model,
            main: key.rng(),
            factor: key.substream(tag::FACTOR).rng(),
            aux: key.substream(tag::LETAC_C).rng(),
            state: 0.0,
            ring: Vec::new(),
            pos: 0,
            burn_in: 0,
            last: Step::default(),
        };
        match &model.variant {
            Variant::Iid { .. } => {}
            Variant::Ma { theta, noise } => {
                chain.ring = (0..theta.len()).map(|_| noise.sample(&mut init)).collect();
                chain.burn_in = theta.len();
            }
            Variant::Ar1 { phi, noise } => {
                let mut sum = 0.0;
                let mut prod = 1.0;
                let mut i = 0;
                while i < SERIES_CAP {
                    sum += prod * noise.sample(&mut init);
                    i += 1;
                    prod *= phi;
                    if fabs(prod) < SERIES_TOL {
                        break;
                    }
                }
                chain.state = sum;
                chain.burn_in = i;
            }
            Variant::SreAffine { a, b, .. } => {
                let (x, used) = compose_backward(&mut init, a, |r| (b.sample(r), 0.0), |a, (b, _), x| a * x + b);
                chain.state = x;
                chain.burn_in = used;
            }
            Variant::SreMax { a, b, .. } => {
                let (x, used) = compose_backward(&mut init, a, |r| (b.sample(r), 0.0), |a, (b, _), x| (a * x).max(b));
                chain.state = x;
                chain.burn_in = used;
            }
            Variant::Letac { a, c, d, .. } => {
                let (x, used) =
                    compose_backward(&mut init, a, |r| (d.sample(r), c.sample(r)), |a, (d, c), x| a * x.max(c) + d);
                chain.state = x;
                chain.burn_in = used;
            }
            Variant::Sv { a, sigma_eta, .. } => {
                let sd = sigma_eta / sqrt(1.0 - a * a);
                chain.state = sd * standard_normal(&mut init);
                chain.burn_in = 1;
            }
            Variant::Garch11 { alpha0, alpha1, beta1, noise, .. } => {
                let mut sum = 0.0;
                let mut prod = 1.0;
                let mut i = 0;
                while i < SERIES_CAP {
                    sum += prod;
                    i += 1;
                    let z = noise.sample(&mut init);
                    prod *= alpha1 * z * z + beta1;
                    if prod < SERIES_TOL {
                        break;
                    }
                }
                chain.state = alpha0 * sum;
                chain.burn_in = i;
            }
        }
        chain
    }

    /// Start the Markov coordinate at a fixed value instead of stationarity.
    pub fn with_state(model: &'m ModelSpec, key: StreamKey, state: f64) -> Self {
        let mut c = Chain::new(model, key);
        c.state = state;
        c
    }

    /// Move the Markov coordinate without touching the streams.
    pub fn set_state(&mut self, state: f64) {
        self.state = state;
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// Markov coordinate: `X_{t}` for AR(1) and the random recursions,
    /// `σ²_{t+1}` for GARCH, `Y_t` for the volatility model.
    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn last(&self) -> &Step {
        &self.last
    }

    /// Advance one step and emit `X_t` (negated for reflected models).
    #[inline]
    pub fn step(&mut self) -> f64 {
        let prev = self.state;
        let x = match &self.model.variant {
            Variant::Iid { noise } => {
                let z = noise.sample(&mut self.main);
                self.last = Step { prev, factor: 0.0, aux: 0.0, innovation: z, state: z };
                z
            }
            Variant::Ma { theta, noise } => {
                let z = noise.sample(&mut self.main);
                let m = theta.len();
                let mut x = z;
                // ring[pos] holds Z_{t-m}; Z_{t-j} sits at pos + m - j.
                for (j, th) in theta.iter().enumerate() {
                    x += th * self.ring[(self.pos + m - 1 - j) % m];
                }
                self.ring[self.pos] = z;
                self.pos = (self.pos + 1) % m;
                self.last = Step { prev, factor: 0.0, aux: 0.0, innovation: z, state: x };
                x
            }
            Variant::Ar1 { phi, noise } => {
                let z = noise.sample(&mut self.main);
                let x = phi * prev + z;
                self.state = x;
                self.last = Step { prev, factor: *phi, aux: 0.0, innovation: z, state: x };
                x
            }
            Variant::SreAffine { a, b, .. } => {
                let f = a.sample(&mut self.factor);
                let bb = b.sample(&mut self.main);
                let x = f * prev + bb;
                self.state = x;
                self.last = Step { prev, factor: f, aux: 0.0, innovation: bb, state: x };
                x
            }
            Variant::SreMax { a, b, .. } => {
                let f = a.sample(&mut self.factor);
                let bb = b.sample(&mut self.main);
                let x = (f * prev).max(bb);
                self.state = x;
                self.last = Step { prev, factor: f, aux: 0.0, innovation: bb, state: x };
                x
            }
            Variant::Letac { a, c, d, .. } => {
                let f = a.sample(&mut self.factor);
                let cc = c.sample(&mut self.aux);
                let dd = d.sample(&mut self.main);
                let x = f * prev.max(cc) + dd;
                self.state = x;
                self.last = Step { prev, factor: f, aux: cc, innovation: dd, state: x };
                x
            }
            Variant::Sv { a, sigma_eta, noise } => {
                let y = a * prev + sigma_eta * standard_normal(&mut self.aux);
                let z = noise.sample(&mut self.main);
                self.state = y;
                let x = exp(y) * z;
                self.last = Step { prev, factor: *a, aux: y, innovation: z, state: y };
                x
            }
            Variant::Garch11 { alpha0, alpha1, beta1, noise, .. } => {
                let z = noise.sample(&mut self.main);
                let x = sqrt(prev) * z;
                let f = alpha1 * z * z + beta1;
                self.state = alpha0 + f * prev;
                self.last = Step { prev, factor: f, aux: 0.0, innovation: z, state: self.state };
                x
            }
        };
        if self.model.reflected {
            -x
        } else {
            x
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.step();
        }
    }
}

/// Stationary start of a random recursion by composing freshly drawn maps
/// from the inside out, beginning at 0 once the running product of factors
/// is negligible (or the cap is reached).
fn compose_backward<R, D, F>(rng: &mut R, a: &ALaw, mut draw: D, map: F) -> (f64, usize)
where
    R: RngCore,
    D: FnMut(&mut R) -> (f64, f64),
    F: Fn(f64, (f64, f64), f64) -> f64,
{
    let mut maps: Vec<(f64, (f64, f64))> = Vec::new();
    let mut prod = 1.0;
    while maps.len() < SERIES_CAP {
        let f = a.sample(rng);
        let extra = draw(rng);
        maps.push((f, extra));
        prod *= f;
        if prod < SERIES_TOL {
            break;
        }
    }
    let mut x = 0.0;
    for &(f, extra) in maps.iter().rev() {
        x = map(f, extra, x);
    }
    (x, maps.len())
}

/// Simulate `n` steps from stationarity on the replication stream
/// `(seed, stream_id)`.
pub fn simulate(model: &ModelSpec, n: usize, seed: u64, stream_id: u64) -> Result<SamplePath> {
    model.validate_dynamics()?;
    if n == 0 {
        return Err(Error::Input("path length must be positive".into()));
    }
    let mut chain = Chain::new(model, StreamKey::new(seed, stream_id));
    let mut values = vec![0.0; n];
    chain.fill(&mut values);
    Ok(SamplePath {
        values,
        model: model.clone(),
        seed,
        stream_id,
        burn_in_used: chain.burn_in(),
    })
}

/// Check the parts of the model needed for simulation.
pub fn check_simulable(model: &ModelSpec) -> Result<()> {
    model.validate_dynamics()
}

/// Declared tail index solved for a GARCH(1,1) noise law: the root of
/// `E(α₁ Z² + β₁)^{α/2} = 1`, returned as `α`.
pub fn garch_tail_index(alpha1: f64, beta1: f64, noise: &NoiseLaw) -> Option<f64> {
    ALaw::SquaredNoise { alpha1, beta1, noise: noise.clone() }
        .kesten_root()
        .map(|k| 2.0 * k)
}

/// A GARCH(1,1) spec with its tail index solved numerically.
pub fn garch_calibrated(alpha0: f64, alpha1: f64, beta1: f64, noise: NoiseLaw) -> Result<ModelSpec> {
    let alpha = garch_tail_index(alpha1, beta1, &noise)
        .ok_or_else(|| Error::Model("no Kesten root for the GARCH volatility factor".into()))?;
    let m: ModelSpec = Variant::Garch11 { alpha0, alpha1, beta1, noise, alpha }.into();
    m.validate()?;
    Ok(m)
}
