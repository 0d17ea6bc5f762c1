//! Seeded random streams, one independent ChaCha stream per purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

/// What a random stream is used for. Each purpose gets its own ChaCha
/// stream id so that consuming randomness in one place never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Selection = 1,
    Measurement = 2,
    Init = 3,
    Training = 4,
    Sampling = 5,
    Decode = 6,
    Data = 7,
    Queries = 8,
}

pub fn stream(seed: u64, purpose: Purpose) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
