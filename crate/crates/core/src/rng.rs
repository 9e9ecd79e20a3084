//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha stream of the same seed, so
//! adding draws in one place never shifts the values seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Dropout = 1,
    Split = 2,
    Signals = 3,
    Labels = 4,
    Graph = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
