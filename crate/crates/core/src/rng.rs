//! Seeded, splittable random streams.
//!
//! A replica is addressed by `(seed, stream_id)`. Its base state is drawn by
//! SplitMix64 from both numbers, so distinct replicas start at unrelated
//! points of the Xoshiro256++ cycle. Substreams of one replica are separated
//! by `jump()` (2^128 steps) and never overlap.

use rand::SeedableRng;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use serde::{Deserialize, Serialize};

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Main generator of this replica (substream 0).
    pub fn rng(&self) -> StreamRng {
        self.substream(0)
    }

    /// Substream `index` of this replica.
    pub fn substream(&self, index: u32) -> StreamRng {
        let mut mixer = SplitMix64::seed_from_u64(self.seed);
        // Fold the stream id in through a second SplitMix64 round so that
        // (seed, id) and (seed', id') collide only if both agree.
        let key = {
            use rand::RngCore;
            let a = mixer.next_u64();
            let mut m2 = SplitMix64::seed_from_u64(a ^ self.stream_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            m2.next_u64()
        };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(key);
        for _ in 0..index {
            rng.jump();
        }
        rng
    }
}

/// Uniform in `(0, 1]`; safe to take the logarithm of.
#[inline]
pub fn open_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Exponential(rate). Ziggurat sampler: about three times cheaper than
/// `-ln U` and built from pure arithmetic on the fast path.
#[inline]
pub fn exponential<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    rng.sample::<f64, _>(rand_distr::Exp1) / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(s: RngStream, sub: u32, k: usize) -> Vec<u64> {
        let mut r = s.substream(sub);
        (0..k).map(|_| r.random()).collect()
    }

    #[test]
    fn same_address_same_sequence() {
        assert_eq!(draws(RngStream::new(7, 3), 0, 8), draws(RngStream::new(7, 3), 0, 8));
        assert_eq!(draws(RngStream::new(7, 3), 2, 8), draws(RngStream::new(7, 3), 2, 8));
    }

    #[test]
    fn streams_and_substreams_differ() {
        let base = draws(RngStream::new(7, 3), 0, 4);
        assert_ne!(base, draws(RngStream::new(7, 4), 0, 4));
        assert_ne!(base, draws(RngStream::new(8, 3), 0, 4));
        assert_ne!(base, draws(RngStream::new(3, 7), 0, 4));
        assert_ne!(base, draws(RngStream::new(7, 3), 1, 4));
    }

    #[test]
    fn neighbouring_streams_uncorrelated() {
        // lag-0 correlation of uniforms between stream i and i+1
        let k = 20_000;
        let mut acc = 0.0;
        for s in 0..10u64 {
            let mut a = RngStream::new(42, s).rng();
            let mut b = RngStream::new(42, s + 1).rng();
            let (mut sab, mut sa, mut sb, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for _ in 0..k {
                let x: f64 = a.random();
                let y: f64 = b.random();
                sab += x * y;
                sa += x;
                sb += y;
                saa += x * x;
                sbb += y * y;
            }
            let kf = k as f64;
            let cov = sab / kf - sa * sb / kf / kf;
            let corr = cov / ((saa / kf - (sa / kf).powi(2)) * (sbb / kf - (sb / kf).powi(2))).sqrt();
            acc += corr;
            assert!(corr.abs() < 4.0 / kf.sqrt(), "stream {s}: corr {corr}");
        }
        assert!((acc / 10.0).abs() < 4.0 / (10.0 * k as f64).sqrt());
    }

    #[test]
    fn exponential_mean() {
        let mut r = RngStream::new(1, 0).rng();
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| exponential(&mut r, 4.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 4.0 * 0.25 / (n as f64).sqrt());
    }
}
