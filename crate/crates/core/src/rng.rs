//! Seeded randomness.
//!
//! All random draws in the crate go through [`seeded`], which returns a
//! ChaCha8 stream generator. ChaCha8 output is specified independently of
//! the host platform, so a given seed reproduces bit-identical graphs,
//! partitions and synthetic datasets everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
