//! Seed derivation and serializable RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer; spreads nearby seeds across the state space.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one consumer of randomness.
pub fn stream(master: u64, tag: Stream) -> StreamRng {
    StreamRng::seed_from_u64(mix64(master ^ mix64(tag as u64 + 1)))
}

/// Per-instance environment stream: mixed master seed XOR instance index.
pub fn instance_stream(master: u64, instance: usize) -> StreamRng {
    StreamRng::seed_from_u64(mix64(master) ^ instance as u64)
}

/// Randomness consumers in a training run. Each gets its own stream so
/// toggling one consumer never shifts another's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Action = 2,
    Shuffle = 3,
    Augment = 4,
    Subsample = 5,
    Eval = 6,
    SrlInit = 7,
}

/// Words needed by [`save_rng`].
pub const RNG_STATE_WORDS: usize = 7;

/// Seed (4 words), stream id, and 128-bit word position.
pub fn save_rng(rng: &StreamRng) -> [u64; RNG_STATE_WORDS] {
    let seed = rng.get_seed();
    let mut out = [0u64; RNG_STATE_WORDS];
    for (i, chunk) in seed.chunks_exact(8).enumerate() {
        out[i] = u64::from_le_bytes(chunk.try_into().unwrap());
    }
    out[4] = rng.get_stream();
    let pos = rng.get_word_pos();
    out[5] = pos as u64;
    out[6] = (pos >> 64) as u64;
    out
}

pub fn load_rng(words: &[u64]) -> Result<StreamRng> {
    if words.len() != RNG_STATE_WORDS {
        return Err(Error::Format(format!(
            "rng state has {} words, expected {RNG_STATE_WORDS}",
            words.len()
        )));
    }
    let mut seed = [0u8; 32];
    for i in 0..4 {
        seed[i * 8..i * 8 + 8].copy_from_slice(&words[i].to_le_bytes());
    }
    let mut rng = StreamRng::from_seed(seed);
    rng.set_stream(words[4]);
    rng.set_word_pos(words[5] as u128 | (words[6] as u128) << 64);
    Ok(rng)
}
