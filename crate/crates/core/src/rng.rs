//! Seeded random streams. Each source of randomness draws from its own
//! ChaCha stream of the run seed, so changing how one source is consumed
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FOLD_STREAM: u64 = 1;
pub const DEV_STREAM: u64 = 2;
pub const UNKNOWN_INIT_STREAM: u64 = 3;
pub const RAND_INIT_STREAM: u64 = 4;
pub const PARAM_INIT_STREAM: u64 = 5;
/// Shuffling and dropout get one stream per epoch, offset from these bases.
pub const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
pub const DROPOUT_STREAM_BASE: u64 = 2 << 32;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
