//! Deterministic counter-based random number generator.
//!
//! The generator is a Weyl sequence with a 64-bit avalanche mix
//! (splitmix64). State is the pair (seed-derived counter, draw count),
//! all arithmetic is wrapping integer math, so identical seeds give
//! bit-identical streams on every platform.

/// Counter-based PRNG (splitmix64).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: u64,
    draws: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            state: seed,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of `next_u64` draws made so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Restore a generator to an exact stream position.
    pub fn restore(seed: u64, draws: u64) -> Self {
        // The Weyl counter advances by GAMMA per draw, so seeking is O(1).
        Rng {
            seed,
            state: seed.wrapping_add(GAMMA.wrapping_mul(draws)),
            draws,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        self.draws += 1;
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (always consumes two draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Derive an independent child generator (for per-seed or per-instance
    /// substreams) without disturbing this stream's reproducibility.
    pub fn fork(&mut self, tag: u64) -> Rng {
        let s = self.next_u64() ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        Rng::new(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    // Frozen first outputs pin the stream across compiler/platform changes.
    #[test]
    fn stream_regression_pin() {
        let mut r = Rng::new(0);
        let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                16294208416658607535,
                7960286522194355700,
                487617019471545679
            ]
        );
    }

    #[test]
    fn restore_seeks_to_position() {
        let mut a = Rng::new(7);
        for _ in 0..13 {
            a.next_u64();
        }
        let mut b = Rng::restore(7, a.draws());
        assert_eq!(a.next_u64(), b.next_u64());
        assert_eq!(a.next_f64(), b.next_f64());
    }

    #[test]
    fn below_is_in_range_and_deterministic() {
        let mut r = Rng::new(5);
        let xs: Vec<usize> = (0..50).map(|_| r.below(7)).collect();
        assert!(xs.iter().all(|&x| x < 7));
        let mut r2 = Rng::new(5);
        let ys: Vec<usize> = (0..50).map(|_| r2.below(7)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut r = Rng::new(99);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
