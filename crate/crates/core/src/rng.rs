//! Seeded randomness: a splittable 64-bit mixer plus a xoshiro256** stream.
//!
//! Streams are always derived by name/tag through [`mix`], never by drawing
//! from a shared sequential source, so adding or skipping one consumer does
//! not shift any other stream. This is what makes e.g. a FixMatch run with
//! `lambda_u = 0` bit-identical to a supervised run on the same seed.

use alloc::vec::Vec;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64-style avalanche step combining `h` with `v`.
fn mix_step(h: u64, v: u64) -> u64 {
    let mut z = h ^ v.wrapping_mul(GOLDEN);
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable hash: folds `parts` into `seed` one avalanche step at a time.
///
/// Used for every seed derivation in the workspace (augmentation views,
/// batch shuffles, sweep cells), so derived streams are portable across
/// implementations that reproduce this function.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix_step(seed, 0), |h, &p| mix_step(h, p))
}

/// xoshiro256** seeded via splitmix64 expansion.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next = || {
            sm = sm.wrapping_add(GOLDEN);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Rng { s: [next(), next(), next(), next()] }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform f32 in [0, 1) with 24 bits of precision.
    pub fn f32_unit(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform f32 in [lo, hi).
    pub fn f32_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.f32_unit()
    }

    pub fn bool(&mut self, p: f32) -> bool {
        self.f32_unit() < p
    }

    /// Uniform index in [0, n). Rejection-sampled, so it is unbiased.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller (cos branch only, for determinism).
    pub fn normal(&mut self) -> f32 {
        let u1 = self.f32_unit().max(1e-12);
        let u2 = self.f32_unit();
        let r = libm::sqrtf(-2.0 * libm::logf(u1));
        r * libm::cosf(2.0 * core::f32::consts::PI * u2)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// A shuffled `0..n` permutation.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(1, &[2, 3]), mix(1, &[3, 2]));
        assert_ne!(mix(1, &[2]), mix(2, &[1]));
        assert_eq!(mix(7, &[1, 2]), mix(7, &[1, 2]));
    }

    #[test]
    fn streams_are_deterministic() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_floats_in_range() {
        let mut rng = Rng::new(9);
        for _ in 0..10_000 {
            let v = rng.f32_unit();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn permutation_covers_all_indices() {
        let mut rng = Rng::new(3);
        let mut p = rng.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn index_is_roughly_uniform() {
        let mut rng = Rng::new(11);
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            counts[rng.index(10)] += 1;
        }
        for &c in &counts {
            assert!((8_000..12_000).contains(&c), "count {c} far from uniform");
        }
    }
}
