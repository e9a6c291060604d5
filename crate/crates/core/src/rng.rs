//! Seeded random streams.
//!
//! Every sampler in the crate takes an explicit generator. Independent
//! streams are derived from a master seed by stream index, so work that is
//! split across threads reduces to the same result as a sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    stream(seed, 0)
}
