//! Seed derivation. All randomness in the crate flows from an explicit
//! master seed through fixed per-component streams, so components can be
//! created in any order without perturbing each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent RNGs of one experiment.
pub mod stream {
    pub const LABEL_SPACE: u64 = 1;
    pub const ANCHORS: u64 = 2;
    /// Domain stream for source `m` is `DOMAIN_BASE + m`; the target domain
    /// uses `DOMAIN_BASE + TARGET_DOMAIN_OFFSET`.
    pub const DOMAIN_BASE: u64 = 100;
    pub const TARGET_DOMAIN_OFFSET: u64 = 63;
    /// Source client `m` trains from `SOURCE_CLIENT_BASE + m`.
    pub const SOURCE_CLIENT_BASE: u64 = 200;
    pub const TARGET_MODEL: u64 = 300;
    pub const TARGET_TRAINING: u64 = 301;
    pub const MEMORY_BANK: u64 = 302;
    pub const PROTOTYPES: u64 = 303;
}

/// A ChaCha generator on an independent stream of the master seed.
pub fn derive(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
