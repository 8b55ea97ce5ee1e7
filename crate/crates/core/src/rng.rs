//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes its generator explicitly. Independent work
//! items (records, paths, batch items) get their own stream derived from a
//! base seed and a stream id, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Base stream for a seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `stream` of `seed`. Distinct stream ids never overlap.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
