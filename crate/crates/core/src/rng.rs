//! Deterministic random-number streams.
//!
//! Reproducibility contract: every experiment is a pure function of
//! `(master seed, label path)`. Substreams are derived by hashing the seed
//! together with a typed label path (trial index, vertex id, stage name, ...)
//! through SHA-256, which makes distinct paths collide with negligible
//! probability and keeps the derivation stable across releases. The derived
//! 32 bytes key a ChaCha12 generator.
//!
//! Hot inner loops (virtual tree vertices, lattice events) use [`SubRng`], a
//! SplitMix64-style counter generator keyed per object, so that the value of
//! a random object is a deterministic function of its key no matter in which
//! order — or whether — its neighbours are visited. This is what makes lazy
//! tree evaluation and common-random-number reuse across query points exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Domain-separation prefix for stream derivation. Versioned so that any
/// future change to the encoding is an explicit break, not a silent one.
const STREAM_DOMAIN: &[u8] = b"stirflow.stream.v1";

/// One element of a substream label path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label<'a> {
    /// Numeric label (trial index, replica index, grid index).
    Count(u64),
    /// Named label (experiment stage, side, component).
    Name(&'a str),
}

/// Derive the 32-byte key for `(seed, labels)`.
///
/// The empty label list is the root stream of a seed. Encoding: domain tag,
/// little-endian seed, then each label as a type byte (0x01 count / 0x02
/// name) followed by its little-endian value or length-prefixed bytes.
pub fn derive_key(seed: u64, labels: &[Label<'_>]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(STREAM_DOMAIN);
    h.update(seed.to_le_bytes());
    for label in labels {
        match label {
            Label::Count(n) => {
                h.update([0x01]);
                h.update(n.to_le_bytes());
            }
            Label::Name(s) => {
                h.update([0x02]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Derive a ChaCha12 stream for `(seed, labels)`.
pub fn derive_stream(seed: u64, labels: &[Label<'_>]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_key(seed, labels))
}

/// Derive the first 64 bits of a stream key, for keying [`SubRng`] trees.
pub fn derive_key64(seed: u64, labels: &[Label<'_>]) -> u64 {
    let k = derive_key(seed, labels);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}

/// 64-bit finalizer from SplitMix64; bijective, well-mixed.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a parent key with a child index into a child key.
///
/// Used for addressing vertices of a virtual tree: the key of a vertex is a
/// deterministic function of the trial key and the path of child indices,
/// independent of traversal order.
#[inline]
pub fn child_key(parent: u64, index: u64) -> u64 {
    mix64(parent ^ (index.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Counter-based generator for hot loops: a SplitMix64 sequence seeded by a
/// derived key. Statistical quality is adequate for Monte Carlo averaging;
/// anything feeding long-lived state (trial streams, lattice runs) uses the
/// ChaCha streams instead.
#[derive(Debug, Clone)]
pub struct SubRng {
    state: u64,
}

impl SubRng {
    /// Generator keyed by an arbitrary 64-bit key.
    #[inline]
    pub fn new(key: u64) -> Self {
        // Pre-mix so that related keys (consecutive vertex ids) decorrelate.
        SubRng { state: mix64(key) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Exponential with the given rate (mean 1/rate).
    #[inline]
    pub fn exp(&mut self, rate: f64) -> f64 {
        // 1 - uniform() is in (0, 1], so the log is finite.
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Standard normal via Box–Muller (no caching: per-call determinism
    /// matters more here than saving the second coordinate).
    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        // Multiply-shift; bias is O(n / 2^64), negligible for our n.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    /// Frozen test vectors (independently computed from the documented
    /// SHA-256 encoding): the derivation must never change silently.
    #[test]
    fn derivation_vectors_are_frozen() {
        assert_eq!(derive_key64(42, &[]), 0x3159c6066b64e252);
        assert_eq!(derive_key64(42, &[Label::Count(7)]), 0xfa7c3927bd172598);
        assert_eq!(
            derive_key64(42, &[Label::Name("trial"), Label::Count(0)]),
            0x2b4d19fcbda32d72
        );
        assert_eq!(derive_key64(0, &[Label::Name("x")]), 0x0eb867fd3cf48343);
    }

    #[test]
    fn root_stream_is_seed_keyed_generator() {
        // The root stream is defined as derive(seed, []) — same seed, same
        // stream; the Label-free call is the canonical spelling.
        let mut a = derive_stream(7, &[]);
        let mut b = derive_stream(7, &[]);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_change_the_stream() {
        let mut a = derive_stream(7, &[Label::Count(0)]);
        let mut b = derive_stream(7, &[Label::Count(1)]);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = derive_stream(7, &[Label::Name("forward")]);
        let mut d = derive_stream(7, &[Label::Name("dual")]);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    /// Differing trial indices must give streams whose first 64 bits differ;
    /// sampled over a million pairs this is a build-time collision test of
    /// the derivation.
    #[test]
    fn no_first_word_collisions_across_trials() {
        let mut seen = std::collections::HashSet::with_capacity(1 << 20);
        for trial in 0..1_000_000u64 {
            let first = derive_key64(42, &[Label::Name("trial"), Label::Count(trial)]);
            assert!(seen.insert(first), "collision at trial {trial}");
        }
    }

    #[test]
    fn subrng_moments_are_sane() {
        let mut r = SubRng::new(123);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = r.gaussian();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "gaussian mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "gaussian var {var}");

        let mut acc = 0.0;
        for _ in 0..n {
            acc += r.exp(2.0);
        }
        let m = acc / n as f64;
        assert!((m - 0.5).abs() < 0.01, "exp(2) mean {m}");
    }

    #[test]
    fn child_keys_are_order_free() {
        let root = 991;
        let a = child_key(child_key(root, 0), 2);
        let b = child_key(child_key(root, 0), 2);
        assert_eq!(a, b);
        assert_ne!(child_key(root, 0), child_key(root, 1));
    }
}
