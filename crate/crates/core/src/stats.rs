//! Interval estimates and classical tests used by the estimators.

use alloc::vec::Vec;
use libm::{fabs, sqrt};

use crate::error::{input, Result};
use crate::math;

/// Batches used by every batch-means interval.
pub const BATCHES: usize = 32;
/// Two-sided 95% normal quantile used for every reported half-width.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Pairwise (cascade) summation: error grows like `log n` and the result only
/// depends on the slice order, never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let mut s = 0.0;
    for &x in xs {
        s += (x - m) * (x - m);
    }
    s / (n - 1) as f64
}

/// Wilson score interval for a binomial proportion.
pub fn wilson(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * sqrt(p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)) / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Mean with a batch-means standard error over [`BATCHES`] contiguous batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchMean {
    pub mean: f64,
    pub se: f64,
}

impl BatchMean {
    pub fn halfwidth(&self) -> f64 {
        Z95 * self.se
    }
}

pub fn batch_means(xs: &[f64]) -> Result<BatchMean> {
    batch_means_with(xs, BATCHES)
}

pub fn batch_means_with(xs: &[f64], batches: usize) -> Result<BatchMean> {
    if batches < 2 || xs.len() < batches {
        return input(alloc::format!(
            "batch means needs at least {batches} values, got {}",
            xs.len()
        ));
    }
    let means = batch_vector(xs, batches);
    Ok(BatchMean {
        mean: mean(xs),
        se: sqrt(variance(&means) / batches as f64),
    })
}

/// Means of `batches` contiguous, nearly equal batches.
pub fn batch_vector(xs: &[f64], batches: usize) -> Vec<f64> {
    let n = xs.len();
    (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            mean(&xs[lo..hi])
        })
        .collect()
}

/// Ratio of two means with a delta-method batch-means error, for estimators
/// of the form `E[U] / E[V]` computed on common random numbers.
pub fn ratio_of_means(u: &[f64], v: &[f64]) -> Result<(f64, f64, BatchMean)> {
    if u.len() != v.len() {
        return input("ratio_of_means needs paired samples");
    }
    let bu = batch_means(u)?;
    let bv = batch_means(v)?;
    let r = bu.mean / bv.mean;
    let resid: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - r * b).collect();
    let br = batch_means(&resid)?;
    Ok((r, br.se / fabs(bv.mean), bv))
}

/// Least squares fit `y = a + b x` with optional weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
}

pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 3 || y.len() != n || w.len() != n {
        return input("line fit needs at least three weighted points");
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
    }
    if sxx <= 0.0 {
        return input("line fit needs distinct abscissae");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for i in 0..n {
        let r = y[i] - intercept - slope * x[i];
        rss += w[i] * r * r;
    }
    let sigma2 = rss / (n - 2) as f64;
    Ok(LineFit {
        intercept,
        slope,
        slope_se: sqrt(sigma2 / sxx),
    })
}

/// Ordinary least squares line with a sandwich slope error built from known
/// per-point variances of `y` (heteroskedastic Monte Carlo means).
pub fn line_known_variance(x: &[f64], y: &[f64], var_y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || var_y.len() != n {
        return input("line fit needs at least two points");
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return input("line fit needs distinct abscissae");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let var: f64 = x
        .iter()
        .zip(var_y)
        .map(|(a, v)| (a - mx) * (a - mx) * v)
        .sum::<f64>()
        / (sxx * sxx);
    Ok(LineFit {
        intercept: my - slope * mx,
        slope,
        slope_se: sqrt(var),
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return input("KS test needs two non-empty samples");
    }
    let mut xa: Vec<f64> = a.to_vec();
    let mut xb: Vec<f64> = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = if xa[i] <= xb[j] { xa[i] } else { xb[j] };
        while i < na && xa[i] <= v {
            i += 1;
        }
        while j < nb && xb[j] <= v {
            j += 1;
        }
        d = d.max(fabs(i as f64 / na as f64 - j as f64 / nb as f64));
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let s = sqrt(ne);
    let lambda = (s + 0.12 + 0.11 / s) * d;
    Ok((d, math::kolmogorov_sf(lambda)))
}

/// Ljung-Box portmanteau statistic over lags `1..=lags` and its chi-square
/// p-value.
pub fn ljung_box(xs: &[f64], lags: usize) -> Result<(f64, f64)> {
    let n = xs.len();
    if lags == 0 || n <= lags + 1 {
        return input("Ljung-Box needs more observations than lags");
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if c0 <= 0.0 {
        return Err(crate::Error::Degenerate("constant series".into()));
    }
    let mut q = 0.0;
    for h in 1..=lags {
        let mut c = 0.0;
        for t in h..n {
            c += (xs[t] - m) * (xs[t - h] - m);
        }
        let r = c / c0;
        q += r * r / (n - h) as f64;
    }
    let q = q * n as f64 * (n as f64 + 2.0);
    Ok((q, math::chi2_sf(q, lags as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, uniform, StreamKey};

    #[test]
    fn wilson_brackets_proportion() {
        let (lo, hi) = wilson(30, 100, Z95);
        assert!(lo < 0.3 && hi > 0.3);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
        let (lo0, hi0) = wilson(0, 1000, Z95);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.005);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
    }

    #[test]
    fn batch_means_of_iid_normals() {
        let mut r = StreamKey::new(9, 0).rng();
        let xs: Vec<f64> = (0..64_000).map(|_| standard_normal(&mut r)).collect();
        let b = batch_means(&xs).unwrap();
        let expected = 1.0 / (64_000f64).sqrt();
        assert!((b.se / expected - 1.0).abs() < 0.4, "{b:?}");
        assert!(batch_means(&xs[..10]).is_err());
    }

    #[test]
    fn line_recovers_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let f = weighted_line(&x, &y, &[1.0; 10]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        let g = line_known_variance(&x, &y, &[0.0; 10]).unwrap();
        assert!((g.slope - 0.5).abs() < 1e-12 && g.slope_se == 0.0);
    }

    #[test]
    fn ks_same_law_accepts_and_shift_rejects() {
        let mut r = StreamKey::new(5, 0).rng();
        let a: Vec<f64> = (0..5000).map(|_| uniform(&mut r)).collect();
        let b: Vec<f64> = (0..5000).map(|_| uniform(&mut r)).collect();
        let c: Vec<f64> = b.iter().map(|v| v + 0.1).collect();
        assert!(ks_two_sample(&a, &b).unwrap().1 > 1e-3);
        assert!(ks_two_sample(&a, &c).unwrap().1 < 1e-6);
    }

    #[test]
    fn ljung_box_white_noise_and_ar() {
        let mut r = StreamKey::new(6, 0).rng();
        let e: Vec<f64> = (0..4000).map(|_| standard_normal(&mut r)).collect();
        assert!(ljung_box(&e, 10).unwrap().1 > 1e-3);
        let mut ar = Vec::with_capacity(e.len());
        let mut x = 0.0;
        for v in &e {
            x = 0.6 * x + v;
            ar.push(x);
        }
        assert!(ljung_box(&ar, 10).unwrap().1 < 1e-10);
    }
}
