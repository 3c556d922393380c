//! Deterministic counter-based randomness.
//!
//! Every random decision in the library flows through an [`RngStream`]: a
//! ChaCha8 generator keyed by a 64-bit seed plus a 64-bit stream id. Distinct
//! units of work (seed, query, token, round) get distinct stream ids derived
//! by hashing, so work can be reordered or parallelized without changing any
//! output byte.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit offset basis / prime.
const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a hash of a byte slice; stable across platforms and runs.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a stream id from a list of 64-bit parts (experiment seed, query
/// index, token index, ...) by hashing their little-endian bytes.
pub fn derive_stream(parts: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in part.to_le_bytes().iter() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// A counter-based generator addressed by (seed, stream id). Identical
/// addresses produce identical draw sequences on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream under the same seed, addressed by hashing this stream's
    /// id together with `parts`. Use for fanning out child work.
    pub fn substream(&self, parts: &[u64]) -> RngStream {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(self.stream);
        all.extend_from_slice(parts);
        RngStream::new(self.seed, derive_stream(&all))
    }

    /// Uniform draw from the open interval (0, 1): 53-bit resolution shifted
    /// off zero, so logarithms of either `u` or `1-u` stay finite.
    pub fn uniform_open01(&mut self) -> f64 {
        let bits = self.inner.next_u64() >> 11; // 53 random bits in [0, 2^53)
        (bits as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard Gumbel draw: −ln(−ln U) for U uniform on (0, 1).
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform_open01();
        -(-u.ln()).ln()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.inner.next_u64() % n as u64) as usize
    }

    /// Samples an index from an explicit probability vector via inverse CDF.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform_open01();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
