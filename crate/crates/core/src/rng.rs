//! Seedable, splittable random streams.
//!
//! Every stochastic component draws from a ChaCha8 generator. Independent
//! streams for the same seed are obtained with [`stream`]; the full position
//! of a generator can be captured as an [`RngState`] and written into
//! checkpoints next to [`RNG_ALGORITHM`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Identifier recorded in checkpoints for the generator algorithm.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub key: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { key: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

impl fmt::Display for RngState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.key {
            write!(f, "{b:02x}")?;
        }
        write!(f, ":{}:{}", self.stream, self.word_pos)
    }
}

impl FromStr for RngState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let (Some(key_hex), Some(stream), Some(pos), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(format!("bad rng state {s:?}"));
        };
        if key_hex.len() != 64 || !key_hex.is_ascii() {
            return Err(format!("bad rng key {key_hex:?}"));
        }
        let mut key = [0u8; 32];
        for (i, byte) in key.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&key_hex[2 * i..2 * i + 2], 16).map_err(|e| format!("bad rng key: {e}"))?;
        }
        Ok(RngState {
            key,
            stream: stream.parse().map_err(|e| format!("bad rng stream: {e}"))?,
            word_pos: pos.parse().map_err(|e| format!("bad rng position: {e}"))?,
        })
    }
}

/// Stable 64-bit FNV-1a hash, used wherever a split must not depend on file order.
pub fn stable_hash(salt: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in salt.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so that nearby ids spread over the whole range
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Maps a hash to [0, 1).
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
