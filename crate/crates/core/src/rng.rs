//! Counter-based random streams.
//!
//! Every replication owns a [`StreamKey`]: a 64-bit seed plus a stream index
//! fed to ChaCha8's stream counter. Auxiliary sources inside one replication
//! (initialization, factor draws, splitting coins) use [`StreamKey::substream`]
//! so that adding a source never shifts the draws of another.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub type StreamRng = ChaCha8Rng;

/// Substream tags. Fixed forever: changing one changes every recorded path.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const FACTOR: u64 = 2;
    pub const LETAC_C: u64 = 3;
    pub const VOLATILITY: u64 = 4;
    pub const COIN: u64 = 5;
    pub const CONSTANT: u64 = 6;
    pub const PROBE: u64 = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub const fn new(seed: u64, stream: u64) -> Self {
        StreamKey { seed, stream }
    }

    pub fn rng(&self) -> StreamRng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }

    /// An independent key for an auxiliary source of the same replication.
    pub fn substream(&self, tag: u64) -> StreamKey {
        StreamKey {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5EED))),
            stream: self.stream,
        }
    }

    /// A key for an independent experiment phase derived from a master seed.
    pub fn phase(seed: u64, phase: u64) -> u64 {
        splitmix64(seed.wrapping_add(splitmix64(phase)))
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn uniform_open<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by the polar method; one value per call, the partner is
/// dropped so that consumption depends only on the call count pattern.
#[inline]
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * uniform(rng) - 1.0;
        let v = 2.0 * uniform(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * libm::sqrt(-2.0 * libm::log(s) / s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let k = StreamKey::new(42, 7);
        let mut r1 = k.rng();
        let mut r2 = k.rng();
        for _ in 0..100 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
        let mut other = StreamKey::new(42, 8).rng();
        let mut sub = k.substream(tag::INIT).rng();
        let mut base = k.rng();
        let x = base.next_u64();
        assert_ne!(x, other.next_u64());
        assert_ne!(x, sub.next_u64());
    }

    #[test]
    fn uniform_ranges() {
        let mut r = StreamKey::new(1, 0).rng();
        for _ in 0..10_000 {
            let u = uniform(&mut r);
            assert!((0.0..1.0).contains(&u));
            let v = uniform_open(&mut r);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamKey::new(3, 0).rng();
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut r);
            s1 += z;
            s2 += z * z;
        }
        let m = s1 / n as f64;
        let v = s2 / n as f64 - m * m;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
