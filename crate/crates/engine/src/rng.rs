//! Counter-based seeded randomness with labeled stream splitting.
//!
//! Every random decision in a campaign flows through [`Rng`]. The generator
//! is a keyed SplitMix64 counter: output `i` of a stream is a pure function
//! of `(key, i)`, so replaying a campaign replays every draw bit for bit,
//! and checkpointing a stream is just saving two u64s. `split` derives an
//! independent child stream from `(parent key, label)` without consuming
//! state, which is what lets parallel workers stay deterministic: give each
//! worker its own label and the draw order of other workers cannot affect it.
//!
//! Not cryptographically secure. Do not use for secrets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Id;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0xB542_9DD3_1A7C_78E5;

#[inline]
fn mix64(x: u64) -> u64 {
    // SplitMix64 finalizer; bijective on u64.
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic counter-based generator. Single-owner: clone or split it,
/// never share one instance between threads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng { key: seed, counter: 0 }
    }

    /// Derive an independent child stream from `(parent key, label)`.
    ///
    /// Pure in the parent: splitting does not advance the parent stream, and
    /// splitting twice with the same label yields identical children.
    pub fn split(&self, label: &str) -> Result<Rng> {
        if label.is_empty() {
            return Err(Error::invalid("split label must be non-empty"));
        }
        let key = mix64(self.key ^ fnv1a(label.as_bytes()) ^ SPLIT_SALT);
        Ok(Rng { key, counter: 0 })
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)));
        self.counter += 1;
        out
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        // 53 high bits -> mantissa.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() requires a non-empty range");
        (self.next_u64() % n as u64) as usize
    }

    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

/// Draw a fresh opaque id from `rng`.
///
/// Ids drawn from one stream are unique within that stream: the counter walk
/// composed with the SplitMix64 finalizer is a bijection on u64.
pub fn make_id(rng: &mut Rng) -> Id {
    Id::new(rng.next_u64())
}
