//! Deterministic randomness for the simulator.
//!
//! The generator is xoshiro256** (via `rand_xoshiro`), a portable 64-bit
//! generator with a fixed published algorithm, so every stream is
//! reproducible across platforms and runs. Independent streams are derived
//! from an experiment seed plus integer tags (round index, client id, ...)
//! with a SplitMix64 mixing chain; clients therefore draw from their own
//! streams and results do not depend on scheduling order.
//!
//! Distribution samplers are implemented here on top of the raw generator —
//! Gaussian via the Marsaglia polar method, Gamma via the Marsaglia–Tsang
//! method — with all transcendentals routed through `libm`, keeping the
//! sampled streams bit-identical everywhere.

use alloc::vec::Vec;

use rand_xoshiro::rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// SplitMix64 finalizer: a single mixing step of the SplitMix64 generator.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of integer tags into a child seed.
///
/// Used to carve per-purpose / per-round / per-client streams out of the
/// single experiment seed. Changing any tag yields an unrelated stream.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = splitmix64(base);
    for &t in tags {
        z = splitmix64(z ^ t.wrapping_mul(0xA24B_AED4_963E_E407));
    }
    z
}

/// A seeded xoshiro256** stream plus the samplers the simulator needs.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    /// Creates a stream from a 64-bit seed (SplitMix64 state expansion,
    /// as specified by `SeedableRng::seed_from_u64`).
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Creates the child stream identified by `(base, tags)`.
    pub fn derived(base: u64, tags: &[u64]) -> Self {
        Rng::from_seed(derive_seed(base, tags))
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)` via the widening-multiply method
    /// (bias ~ n / 2^64, negligible for the small n used here).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform `f64` in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform `f64` in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard Gaussian via the Marsaglia polar method.
    ///
    /// The spare variate is discarded so the stream consumed per call does
    /// not depend on call history.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * libm::sqrt(-2.0 * libm::log(s) / s);
            }
        }
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang; `shape > 0`.
    ///
    /// For `shape < 1` the standard boost `Gamma(shape + 1) * U^(1/shape)`
    /// is applied.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let boost = libm::pow(self.uniform_open(), 1.0 / shape);
            return self.gamma(shape + 1.0) * boost;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / libm::sqrt(9.0 * d);
        loop {
            let x = self.normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.uniform_open();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
                return d * v;
            }
        }
    }

    /// Symmetric Dirichlet draw: `n` Gamma(alpha, 1) variates normalized.
    pub fn dirichlet(&mut self, alpha: f64, n: usize) -> Vec<f64> {
        assert!(n > 0, "dirichlet needs at least one component");
        let mut draws: Vec<f64> = (0..n).map(|_| self.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            for d in &mut draws {
                *d /= total;
            }
        } else {
            // All draws underflowed to zero (only possible for tiny alpha);
            // fall back to the uniform simplex point.
            let w = 1.0 / n as f64;
            for d in &mut draws {
                *d = w;
            }
        }
        draws
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Samples `m` distinct values from `0..n` (partial Fisher–Yates),
    /// returned sorted ascending.
    pub fn sample_distinct(&mut self, n: usize, m: usize) -> Vec<usize> {
        assert!(m <= n, "cannot sample {m} distinct values from 0..{n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(m);
        pool.sort_unstable();
        pool
    }

    /// Uniform in the open interval `(0, 1)`; used where `log(u)` must stay
    /// finite.
    fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }
}
