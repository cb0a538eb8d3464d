//! Seeded ChaCha8 streams. ChaCha is counter based, so every stream is
//! reproducible across platforms from `(seed, stream)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SPLIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_SYNTH: u64 = 4;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = seeded(seed);
    r.set_stream(stream);
    r
}
