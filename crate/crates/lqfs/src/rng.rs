//! Deterministic, stream-splittable randomness for simulations.
//!
//! Every replication draws from its own ChaCha stream, so an ensemble is
//! reproducible from a single `u64` seed and replications stay independent
//! no matter how they are scheduled.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// RNG for one replication. `seed` identifies the experiment, `stream`
/// the replication within it; distinct streams never overlap.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
