//! Named, order-independent random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, round, client, purpose)`. Two strategies run from the same seed
//! therefore draw identical mini-batches for a given round and client, and
//! clients can be evaluated in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    MiniBatch = 1,
    Compression = 2,
    Partition = 3,
    Init = 4,
    SyntheticCentroids = 5,
    SyntheticTrain = 6,
    SyntheticEval = 7,
    Oracle = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the stream for one `(seed, round, client, purpose)` tuple.
pub fn stream(seed: u64, round: u64, client: u64, purpose: Purpose) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, word) in [round, client, purpose as u64, 0x6561_666f].into_iter().enumerate() {
        h = splitmix64(h ^ word);
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
