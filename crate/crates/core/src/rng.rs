//! Deterministic random number generation for the simulator.
//!
//! The generator is SplitMix64: the state is a Weyl counter advanced by a
//! fixed odd constant, and each output is an avalanche hash of that counter.
//! Two properties matter here:
//!
//! - outputs are a pure function of (seed, draw index), so a run is
//!   reproducible bit-for-bit from its seed;
//! - streams can be split by hashing a (seed, shard) pair into a fresh
//!   seed, giving each simulation shard an independent stream without
//!   cross-shard correlation.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive the stream for one shard of a sharded computation.
    ///
    /// The shard seed is a hash of (seed, shard index), so neighbouring
    /// shards get unrelated streams and `for_shard(s, 0)` differs from
    /// `new(s)` only by the extra mixing step.
    pub fn for_shard(seed: u64, shard: u64) -> Self {
        let derived = mix(seed ^ mix(shard.wrapping_add(1).wrapping_mul(GAMMA)));
        Self { state: derived }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Bernoulli draw with success probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Poisson draw with mean `mu`, by Knuth's product-of-uniforms method.
    ///
    /// Expected cost is O(mu + 1) uniforms; the simulator only uses
    /// mu of order one, so no large-mu algorithm is needed.
    pub fn poisson(&mut self, mu: f64) -> u64 {
        debug_assert!(mu >= 0.0 && mu.is_finite());
        let limit = (-mu).exp();
        let mut k: u64 = 0;
        let mut product = 1.0;
        loop {
            product *= self.next_f64();
            if product <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// Index draw from a cumulative distribution (non-decreasing, last = 1).
    pub fn categorical(&mut self, cumulative: &[f64]) -> usize {
        let u = self.next_f64();
        for (i, &c) in cumulative.iter().enumerate() {
            if u < c {
                return i;
            }
        }
        cumulative.len() - 1
    }
}
