//! Reproducible random streams.
//!
//! Every Monte Carlo consumer derives its generator from a `(seed, stream)`
//! pair. The underlying ChaCha8 generator is counter based: distinct stream
//! ids give non-overlapping keystreams for the same seed, so work can be
//! split across paths, seasons or replications without coordination and the
//! result does not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seed plus a namespace tag so unrelated consumers never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: u64,
}

impl StreamKey {
    pub const fn new(seed: u64, domain: u64) -> Self {
        Self { seed, domain }
    }

    /// Derive a child key, e.g. one per replication.
    pub fn child(self, tag: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(self.domain))), domain: self.domain }
    }

    /// Generator for stream `id` inside this key's namespace.
    pub fn stream(self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ self.domain.rotate_left(32)));
        rng.set_stream(id);
        rng
    }
}

/// Domain tags. Kept in one place so collisions are visible.
pub mod domain {
    pub const OU_PATH: u64 = 0x01;
    pub const BRIDGE: u64 = 0x02;
    pub const CDF_TABLE: u64 = 0x03;
    pub const HEATWAVE: u64 = 0x04;
    pub const SEVERITY: u64 = 0x05;
    pub const PREDICTION: u64 = 0x06;
    pub const STUDY: u64 = 0x07;
    pub const MIXING: u64 = 0x08;
    pub const TRAJECTORY: u64 = 0x09;
}

#[inline]
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// SplitMix64 finaliser, used only to decorrelate seed material.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
