//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha8 stream selected by
//! `(base_seed, stream)`, so results never depend on how replicates are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub base_seed: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(base_seed: u64, stream: u64) -> Self {
        SeedRecord { base_seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.base_seed, self.stream)
    }
}

pub fn stream_rng(base_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

/// Derive an unrelated base seed for a sub-experiment (splitmix64 finaliser).
pub fn derive_seed(base_seed: u64, tag: u64) -> u64 {
    let mut z = base_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `f` once per replicate on its own stream, in parallel, returning the
/// results in replicate order.
pub fn replicate_map<T, F>(base_seed: u64, replicates: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base_seed, r as u64);
            f(&mut rng, r)
        })
        .collect()
}
