//! Innovation laws used by the model zoo.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use libm::{erfc, exp, fabs, log, pow, sqrt};
use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::math::{self, ln_gamma, SQRT_2};
use crate::rng::{standard_normal, uniform};
use crate::rv::TailSpec;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "law", rename_all = "snake_case"))]
pub enum NoiseLaw {
    /// Exact Pareto magnitudes on `[x_m, ∞)` with random sign.
    Pareto(TailSpec),
    /// Uniform core on `(-x_m, x_m)` glued to a Pareto tail so that the
    /// density is continuous in `|z|` and positive on the whole line.
    SmoothedPareto(TailSpec),
    Gaussian { sd: f64 },
    /// Student t with `dof` degrees of freedom scaled to unit variance.
    StudentT { dof: u32 },
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Constant { value: f64 },
}

impl NoiseLaw {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            NoiseLaw::Pareto(t) | NoiseLaw::SmoothedPareto(t) => v.extend(t.violations()),
            NoiseLaw::Gaussian { sd } => {
                if !(sd.is_finite() && *sd > 0.0) {
                    v.push(format!("gaussian sd must be positive, got {sd}"));
                }
            }
            NoiseLaw::StudentT { dof } => {
                if *dof < 3 {
                    v.push(format!("student_t dof must be at least 3 for unit variance, got {dof}"));
                }
            }
            NoiseLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    v.push(format!("uniform needs finite lo < hi, got [{lo}, {hi}]"));
                }
            }
            NoiseLaw::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    v.push("discrete law needs matching non-empty values and probs".into());
                }
                if values.iter().any(|x| !x.is_finite()) {
                    v.push("discrete values must be finite".into());
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    v.push("discrete probs must be nonnegative".into());
                }
                let s: f64 = probs.iter().sum();
                if fabs(s - 1.0) > 1e-12 {
                    v.push(format!("discrete probs must sum to 1, got {s}"));
                }
            }
            NoiseLaw::Constant { value } => {
                if !value.is_finite() {
                    v.push("constant value must be finite".into());
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(v.join("; ")))
        }
    }

    /// Weight of the uniform core of the smoothed Pareto law.
    fn core_weight(alpha: f64) -> f64 {
        alpha / (1.0 + alpha)
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseLaw::Pareto(t) => t.draw(rng),
            NoiseLaw::SmoothedPareto(t) => {
                let u = uniform(rng);
                let s = uniform(rng);
                let w = Self::core_weight(t.alpha);
                let m = if u < w {
                    t.scale * u / w
                } else {
                    t.scale * pow((1.0 - u) / (1.0 - w), -1.0 / t.alpha)
                };
                if s < t.p {
                    m
                } else {
                    -m
                }
            }
            NoiseLaw::Gaussian { sd } => sd * standard_normal(rng),
            NoiseLaw::StudentT { dof } => {
                let z = standard_normal(rng);
                let mut chi = 0.0;
                for _ in 0..*dof {
                    let g = standard_normal(rng);
                    chi += g * g;
                }
                let nu = *dof as f64;
                z / sqrt(chi / nu) * sqrt((nu - 2.0) / nu)
            }
            NoiseLaw::Uniform { lo, hi } => lo + (hi - lo) * uniform(rng),
            NoiseLaw::Discrete { values, probs } => {
                let u = uniform(rng);
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                values[values.len() - 1]
            }
            NoiseLaw::Constant { value } => *value,
        }
    }

    /// Lebesgue density, `None` for atomic laws.
    pub fn density(&self, z: f64) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) => {
                let m = fabs(z);
                if m < t.scale {
                    return Some(0.0);
                }
                let side = if z > 0.0 { t.p } else { t.q };
                Some(side * t.alpha / t.scale * pow(m / t.scale, -t.alpha - 1.0))
            }
            NoiseLaw::SmoothedPareto(t) => {
                let m = fabs(z);
                let w = Self::core_weight(t.alpha);
                let side = if z >= 0.0 { t.p } else { t.q };
                let g = if m < t.scale {
                    w / t.scale
                } else {
                    (1.0 - w) * t.alpha / t.scale * pow(m / t.scale, -t.alpha - 1.0)
                };
                Some(side * g)
            }
            NoiseLaw::Gaussian { sd } => Some(math::normal_pdf(z / sd) / sd),
            NoiseLaw::StudentT { dof } => {
                let nu = *dof as f64;
                let s = sqrt((nu - 2.0) / nu);
                let t = z / s;
                let lc = ln_gamma(0.5 * (nu + 1.0))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * log(nu * core::f64::consts::PI);
                Some(exp(lc - 0.5 * (nu + 1.0) * libm::log1p(t * t / nu)) / s)
            }
            NoiseLaw::Uniform { lo, hi } => Some(if z >= *lo && z < *hi { 1.0 / (hi - lo) } else { 0.0 }),
            NoiseLaw::Discrete { .. } | NoiseLaw::Constant { .. } => None,
        }
    }

    /// `inf { density(z) : z ∈ [lo, hi] }`. Every density here is
    /// nonincreasing in `|z|` on each half line, so the infimum sits at an
    /// endpoint unless the interval crosses a zero-density gap.
    pub fn density_inf(&self, lo: f64, hi: f64) -> Option<f64> {
        let f = |z| self.density(z);
        let (a, b) = (f(lo)?, f(hi)?);
        let gap = match self {
            NoiseLaw::Pareto(t) => hi > -t.scale && lo < t.scale,
            NoiseLaw::SmoothedPareto(t) => (t.p == 0.0 && hi > 0.0) || (t.q == 0.0 && lo < 0.0),
            NoiseLaw::Uniform { lo: ul, hi: uh } => lo < *ul || hi >= *uh,
            _ => false,
        };
        Some(if gap { 0.0 } else { a.min(b) })
    }

    /// `P(|Z| > x)` when available in closed form or by quadrature.
    pub fn abs_tail(&self, x: f64) -> Option<f64> {
        if x < 0.0 {
            return Some(1.0);
        }
        match self {
            NoiseLaw::Pareto(t) => Some(t.tail(x)),
            NoiseLaw::SmoothedPareto(t) => {
                let w = Self::core_weight(t.alpha);
                Some(if x < t.scale {
                    w * (1.0 - x / t.scale) + (1.0 - w)
                } else {
                    (1.0 - w) * pow(x / t.scale, -t.alpha)
                })
            }
            NoiseLaw::Gaussian { sd } => Some(erfc(x / (sd * SQRT_2))),
            NoiseLaw::StudentT { .. } => {
                if x == 0.0 {
                    return Some(1.0);
                }
                let g = |u: f64| {
                    if u <= 0.0 {
                        0.0
                    } else {
                        self.density(1.0 / u).unwrap_or(0.0) / (u * u)
                    }
                };
                Some((2.0 * math::integrate(&g, 0.0, 1.0 / x, 1e-14)).min(1.0))
            }
            NoiseLaw::Uniform { lo, hi } => {
                let len = hi - lo;
                let inside = (hi.min(x) - lo.max(-x)).max(0.0);
                Some(1.0 - inside / len)
            }
            NoiseLaw::Discrete { values, probs } => Some(
                values
                    .iter()
                    .zip(probs)
                    .filter(|(v, _)| fabs(**v) > x)
                    .map(|(_, p)| p)
                    .sum(),
            ),
            NoiseLaw::Constant { value } => Some(if fabs(*value) > x { 1.0 } else { 0.0 }),
        }
    }

    /// Tail index for regularly varying laws, `None` for light tails.
    pub fn tail_index(&self) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) | NoiseLaw::SmoothedPareto(t) => Some(t.alpha),
            NoiseLaw::StudentT { dof } => Some(*dof as f64),
            _ => None,
        }
    }

    /// Right-tail balance `lim P(Z > x) / P(|Z| > x)`.
    pub fn right_balance(&self) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) | NoiseLaw::SmoothedPareto(t) => Some(t.p),
            NoiseLaw::StudentT { .. } => Some(0.5),
            _ => None,
        }
    }

    /// `C` in `P(|Z| > x) ~ C x^{-α}`.
    pub fn tail_constant(&self) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) => Some(pow(t.scale, t.alpha)),
            NoiseLaw::SmoothedPareto(t) => Some((1.0 - Self::core_weight(t.alpha)) * pow(t.scale, t.alpha)),
            NoiseLaw::StudentT { dof } => {
                let nu = *dof as f64;
                let s = sqrt((nu - 2.0) / nu);
                let lk = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * log(nu * core::f64::consts::PI)
                    + 0.5 * (nu + 1.0) * log(nu);
                Some(2.0 * exp(lk) / nu * pow(s, nu))
            }
            _ => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) => t.mean(),
            NoiseLaw::SmoothedPareto(t) => self.abs_moment(1.0).map(|m| (t.p - t.q) * m),
            NoiseLaw::Gaussian { .. } | NoiseLaw::StudentT { .. } => Some(0.0),
            NoiseLaw::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            NoiseLaw::Discrete { values, probs } => Some(values.iter().zip(probs).map(|(v, p)| v * p).sum()),
            NoiseLaw::Constant { value } => Some(*value),
        }
    }

    /// `E|Z|^r` when finite.
    pub fn abs_moment(&self, r: f64) -> Option<f64> {
        match self {
            NoiseLaw::Pareto(t) => t.abs_moment(r),
            NoiseLaw::SmoothedPareto(t) => (r < t.alpha).then(|| {
                let w = Self::core_weight(t.alpha);
                pow(t.scale, r) * (w / (r + 1.0) + (1.0 - w) * t.alpha / (t.alpha - r))
            }),
            NoiseLaw::Gaussian { sd } => Some(
                pow(*sd, r) * pow(2.0, 0.5 * r) * exp(ln_gamma(0.5 * (r + 1.0)) - ln_gamma(0.5)),
            ),
            NoiseLaw::StudentT { dof } => {
                let nu = *dof as f64;
                (r < nu).then(|| {
                    let s = sqrt((nu - 2.0) / nu);
                    pow(s * s * nu, 0.5 * r)
                        * exp(ln_gamma(0.5 * (r + 1.0)) + ln_gamma(0.5 * (nu - r))
                            - ln_gamma(0.5)
                            - ln_gamma(0.5 * nu))
                })
            }
            NoiseLaw::Uniform { lo, hi } => {
                let prim = |x: f64| pow(fabs(x), r + 1.0) / (r + 1.0) * if x < 0.0 { -1.0 } else { 1.0 };
                Some((prim(*hi) - prim(*lo)) / (hi - lo))
            }
            NoiseLaw::Discrete { values, probs } => {
                Some(values.iter().zip(probs).map(|(v, p)| p * pow(fabs(*v), r)).sum())
            }
            NoiseLaw::Constant { value } => Some(pow(fabs(*value), r)),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            NoiseLaw::Pareto(t) | NoiseLaw::SmoothedPareto(t) => t.p == t.q,
            NoiseLaw::Gaussian { .. } | NoiseLaw::StudentT { .. } => true,
            NoiseLaw::Uniform { lo, hi } => *lo == -*hi,
            NoiseLaw::Discrete { values, probs } => values.iter().zip(probs).all(|(v, p)| {
                values
                    .iter()
                    .zip(probs)
                    .any(|(w, q)| *w == -*v && *q == *p)
            }),
            NoiseLaw::Constant { value } => *value == 0.0,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            NoiseLaw::Pareto(t) | NoiseLaw::SmoothedPareto(t) => t.q == 0.0,
            NoiseLaw::Gaussian { .. } | NoiseLaw::StudentT { .. } => false,
            NoiseLaw::Uniform { lo, .. } => *lo >= 0.0,
            NoiseLaw::Discrete { values, probs } => values.iter().zip(probs).all(|(v, p)| *v >= 0.0 || *p == 0.0),
            NoiseLaw::Constant { value } => *value >= 0.0,
        }
    }

    /// Law of `-Z`.
    pub fn mirrored(&self) -> NoiseLaw {
        match self {
            NoiseLaw::Pareto(t) => NoiseLaw::Pareto(t.mirrored()),
            NoiseLaw::SmoothedPareto(t) => NoiseLaw::SmoothedPareto(t.mirrored()),
            NoiseLaw::Uniform { lo, hi } => NoiseLaw::Uniform { lo: -hi, hi: -lo },
            NoiseLaw::Discrete { values, probs } => NoiseLaw::Discrete {
                values: values.iter().map(|v| -v).collect(),
                probs: probs.clone(),
            },
            NoiseLaw::Constant { value } => NoiseLaw::Constant { value: -value },
            other => other.clone(),
        }
    }

    /// Law of `c Z` for `c > 0`, when the family is closed under scaling.
    pub fn scaled(&self, c: f64) -> Option<NoiseLaw> {
        Some(match self {
            NoiseLaw::Pareto(t) => NoiseLaw::Pareto(TailSpec { scale: t.scale * c, ..*t }),
            NoiseLaw::SmoothedPareto(t) => NoiseLaw::SmoothedPareto(TailSpec { scale: t.scale * c, ..*t }),
            NoiseLaw::Gaussian { sd } => NoiseLaw::Gaussian { sd: sd * c },
            NoiseLaw::Uniform { lo, hi } => NoiseLaw::Uniform { lo: lo * c, hi: hi * c },
            NoiseLaw::Discrete { values, probs } => NoiseLaw::Discrete {
                values: values.iter().map(|v| v * c).collect(),
                probs: probs.clone(),
            },
            NoiseLaw::Constant { value } => NoiseLaw::Constant { value: value * c },
            NoiseLaw::StudentT { .. } => return None,
        })
    }

    /// A magnitude `m` with `P(|Z| > m) ≤ eps`.
    pub fn abs_quantile_bound(&self, eps: f64) -> f64 {
        match self {
            NoiseLaw::Pareto(t) => t.scale * pow(eps, -1.0 / t.alpha),
            NoiseLaw::SmoothedPareto(t) => {
                t.scale * pow(eps / (1.0 - Self::core_weight(t.alpha)), -1.0 / t.alpha).max(1.0)
            }
            NoiseLaw::Gaussian { sd } => sd * -math::normal_quantile(0.5 * eps),
            NoiseLaw::StudentT { dof } => {
                let c = self.tail_constant().unwrap_or(1.0);
                2.0 * pow(c / eps, 1.0 / *dof as f64)
            }
            NoiseLaw::Uniform { lo, hi } => fabs(*lo).max(fabs(*hi)),
            NoiseLaw::Discrete { values, .. } => values.iter().fold(0.0, |a, v| a.max(fabs(*v))),
            NoiseLaw::Constant { value } => fabs(*value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{integrate, integrate_half_line};
    use crate::rng::StreamKey;

    fn laws() -> Vec<NoiseLaw> {
        alloc::vec![
            NoiseLaw::Pareto(TailSpec::pareto(1.5, 0.7).unwrap()),
            NoiseLaw::SmoothedPareto(TailSpec::pareto(2.5, 0.5).unwrap()),
            NoiseLaw::Gaussian { sd: 1.3 },
            NoiseLaw::StudentT { dof: 5 },
            NoiseLaw::Uniform { lo: -1.0, hi: 2.0 },
        ]
    }

    #[test]
    fn densities_integrate_to_one() {
        for law in laws() {
            let f = |z: f64| law.density(z).unwrap() + law.density(-z).unwrap();
            let total = integrate(&f, 0.0, 1.0, 1e-12)
                + integrate(&f, 1.0, 2.0, 1e-12)
                + integrate_half_line(&|z: f64| if z < 2.0 { 0.0 } else { f(z) }, 1e-12);
            assert!((total - 1.0).abs() < 1e-6, "{law:?}: {total}");
        }
    }

    #[test]
    fn tails_match_empirical() {
        for (i, law) in laws().into_iter().enumerate() {
            let mut r = StreamKey::new(21, i as u64).rng();
            let n = 200_000;
            let x = 1.7;
            let hits = (0..n).filter(|_| law.sample(&mut r).abs() > x).count() as f64;
            let p = law.abs_tail(x).unwrap();
            let sig = (p * (1.0 - p) / n as f64).sqrt();
            assert!((hits / n as f64 - p).abs() < 4.5 * sig, "{law:?}: {} vs {p}", hits / n as f64);
        }
    }

    #[test]
    fn moments_match_empirical() {
        for (i, law) in laws().into_iter().enumerate() {
            let mut r = StreamKey::new(22, i as u64).rng();
            let n = 400_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut r)).collect();
            let r1 = 1.2;
            let m = law.abs_moment(r1).unwrap();
            let emp = xs.iter().map(|v| v.abs().powf(r1)).sum::<f64>() / n as f64;
            assert!((emp / m - 1.0).abs() < 0.03, "{law:?}: {emp} vs {m}");
            let mu = law.mean().unwrap();
            let emp_mu = xs.iter().sum::<f64>() / n as f64;
            assert!((emp_mu - mu).abs() < 0.05 * (1.0 + mu.abs()), "{law:?}");
        }
    }

    #[test]
    fn student_t_unit_variance_and_tail_constant() {
        let law = NoiseLaw::StudentT { dof: 6 };
        assert!((law.abs_moment(2.0).unwrap() - 1.0).abs() < 1e-12);
        let x = 200.0;
        let c = law.tail_constant().unwrap();
        let t = law.abs_tail(x).unwrap();
        assert!((t / (c * x.powf(-6.0)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn density_inf_at_endpoints() {
        let g = NoiseLaw::Gaussian { sd: 1.0 };
        let v = g.density_inf(-0.5, 0.5).unwrap();
        assert!((v - math::normal_pdf(0.5)).abs() < 1e-16);
        let p = NoiseLaw::Pareto(TailSpec::pareto(1.5, 0.5).unwrap());
        assert_eq!(p.density_inf(0.5, 3.0).unwrap(), 0.0);
        assert!(p.density_inf(2.0, 3.0).unwrap() > 0.0);
        assert!(NoiseLaw::Constant { value: 1.0 }.density_inf(0.0, 1.0).is_none());
    }

    #[test]
    fn validation_lists_problems() {
        let bad = NoiseLaw::Discrete { values: alloc::vec![1.0, 2.0], probs: alloc::vec![0.5, 0.6] };
        assert_eq!(bad.violations().len(), 1);
        assert!(NoiseLaw::StudentT { dof: 2 }.validate().is_err());
        assert!(NoiseLaw::Gaussian { sd: 0.0 }.validate().is_err());
    }
}
