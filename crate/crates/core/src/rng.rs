//! Deterministic random streams.
//!
//! Every consumer of randomness (a worker's sampler, a worker's compressor,
//! the shared LSVRG coin, the data shuffler) owns an independent stream derived
//! from the run seed, a purpose tag and an index. Streams never share state, so
//! results do not depend on the order in which workers execute.

use rand::SeedableRng;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Shuffle = 1,
    Synth = 2,
    Sampler = 3,
    Compressor = 4,
    Coin = 5,
    Probe = 6,
}

/// Returns the stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    // Three SplitMix64 steps decorrelate nearby (seed, tag, index) triples.
    let mut mix = SplitMix64::seed_from_u64(seed);
    let a = rand::RngCore::next_u64(&mut mix);
    let mut mix = SplitMix64::seed_from_u64(a ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let b = rand::RngCore::next_u64(&mut mix);
    let mut mix = SplitMix64::seed_from_u64(b ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    Xoshiro256PlusPlus::seed_from_u64(rand::RngCore::next_u64(&mut mix))
}
