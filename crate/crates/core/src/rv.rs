//! Exact-Pareto regularly varying marginals.

use alloc::format;
use alloc::vec::Vec;
use libm::{fabs, log, pow};
use rand_core::RngCore;

use crate::error::{finite, input, Error, Result};
use crate::rng::uniform;

/// Marginal law with `P(|X| > x) = (x / x_m)^{-α}` for `x ≥ x_m` and a sign
/// that is positive with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailSpec {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    #[cfg_attr(feature = "serde", serde(default = "unit_scale"))]
    pub scale: f64,
}

#[cfg(feature = "serde")]
fn unit_scale() -> f64 {
    1.0
}

impl TailSpec {
    pub fn new(alpha: f64, p: f64, q: f64, scale: f64) -> Result<Self> {
        let s = TailSpec { alpha, p, q, scale };
        s.validate()?;
        Ok(s)
    }

    /// Unit-scale spec with `q = 1 - p`.
    pub fn pareto(alpha: f64, p: f64) -> Result<Self> {
        Self::new(alpha, p, 1.0 - p, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(v.join("; ")))
        }
    }

    /// Every violated invariant, named by field.
    pub fn violations(&self) -> Vec<alloc::string::String> {
        let mut v = Vec::new();
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            v.push(format!("alpha must be positive and finite, got {}", self.alpha));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            v.push(format!("scale must be positive and finite, got {}", self.scale));
        }
        for (name, x) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1], got {x}"));
            }
        }
        // p = 1 - q is only exact up to one rounding of the subtraction.
        if fabs(self.p + self.q - 1.0) > f64::EPSILON {
            v.push(format!("p + q must equal 1, got p = {}, q = {}", self.p, self.q));
        }
        v
    }

    /// Sign-flipped law: `(p, q)` swapped.
    pub fn mirrored(&self) -> Self {
        TailSpec { p: self.q, q: self.p, ..*self }
    }

    pub fn tail(&self, x: f64) -> f64 {
        if x < self.scale {
            1.0
        } else {
            pow(x / self.scale, -self.alpha)
        }
    }

    /// `P(X > x)` for any real `x`.
    pub fn right_tail(&self, x: f64) -> f64 {
        if x >= self.scale {
            self.p * self.tail(x)
        } else if x >= -self.scale {
            self.p
        } else {
            1.0 - self.q * self.tail(-x)
        }
    }

    /// `P(X < -x)` for any real `x`.
    pub fn left_tail(&self, x: f64) -> f64 {
        self.mirrored().right_tail(x)
    }

    /// `E|X|` when finite.
    pub fn abs_mean(&self) -> Option<f64> {
        (self.alpha > 1.0).then(|| self.alpha * self.scale / (self.alpha - 1.0))
    }

    pub fn mean(&self) -> Option<f64> {
        self.abs_mean().map(|m| (self.p - self.q) * m)
    }

    /// `E|X|^r` when `r < α`.
    pub fn abs_moment(&self, r: f64) -> Option<f64> {
        (r < self.alpha).then(|| self.alpha * pow(self.scale, r) / (self.alpha - r))
    }

    #[inline]
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = uniform(rng);
        let s = uniform(rng);
        let m = self.scale * pow(1.0 - u, -1.0 / self.alpha);
        if s < self.p {
            m
        } else {
            -m
        }
    }
}

/// `P(|X| > x)`.
pub fn tail_prob(spec: &TailSpec, x: f64) -> Result<f64> {
    finite("x", x)?;
    Ok(spec.tail(x))
}

/// One draw by inverse CDF on the magnitude and an independent sign coin.
#[inline]
pub fn sample<R: RngCore + ?Sized>(spec: &TailSpec, rng: &mut R) -> f64 {
    spec.draw(rng)
}

/// Order `r` and truncation level `x` of a truncated absolute moment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMomentQuery {
    pub r: f64,
    pub x: f64,
}

/// Exact `E|X|^r 1{|X| ≤ x}`.
pub fn truncated_abs_moment(spec: &TailSpec, q: TruncatedMomentQuery) -> Result<f64> {
    let TruncatedMomentQuery { r, x } = q;
    finite("x", x)?;
    finite("r", r)?;
    if r < 0.0 {
        return input(format!("moment order must be nonnegative, got {r}"));
    }
    if x < spec.scale {
        return input(format!("truncation level {x} is below the scale {}", spec.scale));
    }
    let a = spec.alpha;
    let xm = spec.scale;
    let c = a * pow(xm, a);
    if fabs(r - a) < 1e-12 {
        Ok(c * log(x / xm))
    } else {
        Ok(c * (pow(x, r - a) - pow(xm, r - a)) / (r - a))
    }
}

/// Hill estimator from the `k` largest magnitudes.
pub fn hill_estimate(sample: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return input("k must be positive");
    }
    let mut mags: Vec<f64> = sample
        .iter()
        .map(|v| fabs(*v))
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    if mags.len() < k + 1 {
        return input(format!(
            "need at least k + 1 = {} nonzero magnitudes, got {}",
            k + 1,
            mags.len()
        ));
    }
    // Put the (k+1)-th largest at `pivot` with the k largest above it.
    let pivot = mags.len() - k - 1;
    mags.select_nth_unstable_by(pivot, f64::total_cmp);
    let threshold = mags[pivot];
    let mut sum = 0.0;
    for &m in &mags[pivot + 1..] {
        sum += log(m) - log(threshold);
    }
    if sum <= 0.0 {
        return Err(Error::Degenerate(format!(
            "top {k} magnitudes coincide with the threshold {threshold}"
        )));
    }
    Ok(k as f64 / sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::integrate;
    use crate::rng::StreamKey;

    #[test]
    fn tail_prob_examples() {
        let s1 = TailSpec::pareto(1.0, 0.5).unwrap();
        assert_eq!(tail_prob(&s1, 1.0).unwrap(), 1.0);
        let s2 = TailSpec::pareto(2.0, 0.5).unwrap();
        assert!((tail_prob(&s2, 10.0).unwrap() - 0.01).abs() < 1e-16);
        let s3 = TailSpec::pareto(1.5, 0.5).unwrap();
        assert!((tail_prob(&s3, 100.0).unwrap() - 1e-3).abs() < 1e-17);
        assert!(tail_prob(&s3, f64::NAN).is_err());
        assert!(tail_prob(&s3, f64::INFINITY).is_err());
    }

    #[test]
    fn invalid_specs_name_fields() {
        let e = TailSpec::new(1.5, 0.6, 0.6, 1.0).unwrap_err();
        assert!(alloc::format!("{e}").contains("p + q"));
        assert!(TailSpec::new(-1.0, 0.5, 0.5, 1.0).is_err());
        assert!(TailSpec::new(1.0, 0.5, 0.5, 0.0).is_err());
        assert!(TailSpec::pareto(1.5, 0.7).is_ok());
    }

    #[test]
    fn right_and_left_tails() {
        let s = TailSpec::pareto(1.5, 0.7).unwrap();
        let x = 7.0;
        assert!((s.right_tail(x) + s.left_tail(x) - s.tail(x)).abs() < 1e-16);
        assert_eq!(s.right_tail(0.5), 0.7);
        assert!((s.right_tail(-2.0) - (1.0 - 0.3 * s.tail(2.0))).abs() < 1e-16);
    }

    #[test]
    fn empirical_frequencies_match() {
        let s = TailSpec::pareto(2.0, 0.3).unwrap();
        let mut rng = StreamKey::new(11, 0).rng();
        let n = 1_000_000u64;
        let (mut pos, mut big) = (0u64, 0u64);
        for _ in 0..n {
            let x = s.draw(&mut rng);
            pos += (x > 0.0) as u64;
            big += (x.abs() > 10.0) as u64;
        }
        let nf = n as f64;
        let sig_p = (0.3 * 0.7 / nf).sqrt();
        assert!((pos as f64 / nf - 0.3).abs() < 4.0 * sig_p);
        let sig_t = (0.01 * 0.99 / nf).sqrt();
        assert!((big as f64 / nf - 0.01).abs() < 4.0 * sig_t);
    }

    #[test]
    fn karamata_limit() {
        let s = TailSpec::pareto(1.5, 0.5).unwrap();
        let x = 1e12;
        let m = truncated_abs_moment(&s, TruncatedMomentQuery { r: 2.0, x }).unwrap();
        let ratio = m / (x * x * s.tail(x));
        assert!((ratio - 3.0).abs() < 1e-5, "{ratio}");
        let m0 = truncated_abs_moment(&s, TruncatedMomentQuery { r: 0.0, x: 5.0 }).unwrap();
        assert!((m0 - (1.0 - s.tail(5.0))).abs() < 1e-15);
        assert!(truncated_abs_moment(&s, TruncatedMomentQuery { r: 1.0, x: 0.5 }).is_err());
    }

    #[test]
    fn truncated_moment_against_quadrature() {
        let s = TailSpec::pareto(1.5, 0.5).unwrap();
        let x = 1e4;
        let exact = truncated_abs_moment(&s, TruncatedMomentQuery { r: 1.0, x }).unwrap();
        // Substitute y = ln t to flatten the power-law integrand.
        let f = |y: f64| {
            let t = libm::exp(y);
            t * 1.5 * libm::pow(t, -2.5) * t
        };
        let quad = integrate(&f, 0.0, libm::log(x), 1e-13);
        assert!((quad / exact - 1.0).abs() < 1e-9, "{quad} vs {exact}");
    }

    #[test]
    fn hill_degenerate_and_scale_invariant() {
        let flat = [2.0; 50];
        assert!(matches!(hill_estimate(&flat, 10), Err(Error::Degenerate(_))));
        let s = TailSpec::pareto(1.0, 0.5).unwrap();
        let mut rng = StreamKey::new(3, 0).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| s.draw(&mut rng)).collect();
        let a = hill_estimate(&xs, 1000).unwrap();
        assert!((0.9..=1.1).contains(&a), "{a}");
        let scaled: Vec<f64> = xs.iter().map(|v| 3.7 * v).collect();
        let b = hill_estimate(&scaled, 1000).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
        assert!(hill_estimate(&xs[..5], 10).is_err());
    }
}
