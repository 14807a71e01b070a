//! Seed derivation and serializable generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `tag` under `base`. Injective in `tag` for a fixed base.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

const STATE_LEN: usize = 32 + 8 + 16;

/// Opaque snapshot of a generator: seed, stream and word position.
pub fn save_state(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(STATE_LEN);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn load_state(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != STATE_LEN {
        return Err(Error::Format(format!(
            "rng state has {} bytes, expected {STATE_LEN}",
            bytes.len()
        )));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let stream = u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes"));
    let pos = u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}
