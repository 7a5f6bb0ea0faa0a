//! Seeded random streams.
//!
//! Every stochastic step draws from a xoshiro256++ generator. Independent
//! streams (model init, per-clip synthesis, per-epoch shuffling) are derived
//! from the run seed and a stream id through a splitmix64 mix, so adding a
//! consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Well-known stream ids.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SYNTH_BASE: u64 = 1 << 32;
    pub const GRADCHECK: u64 = 3;
    pub const AUGMENT: u64 = 4;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` of run seed `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}
