//! Seeded random streams. Each concern draws from its own ChaCha stream so
//! that adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_PLACEMENT: u64 = 1;
pub const STREAM_WORKLOAD: u64 = 2;
pub const STREAM_ATTACKS: u64 = 3;
pub const STREAM_SHADOWING: u64 = 4;
pub const STREAM_BACKOFF: u64 = 5;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
