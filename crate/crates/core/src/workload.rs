//! Deterministic key-sequence generation for benchmarks: uniform and
//! Zipf-skewed keys, the table's default 64-bit hash, and a small binary
//! dump format for sharing sequences across runs.
//!
//! All generators are single-threaded and fully determined by their seed;
//! regenerating a sequence from the same spec is bit-identical.

use std::io::{self, Read, Write};

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::cell::MAX_USER_KEY;

/// Default hash: a seeded two-round multiply–xor-shift finalizer over the
/// full 64-bit key. Full-range output; callers map it to a slot with
/// [`crate::table::slot_of`], never by masking low bits.
#[inline]
pub fn hash64(key: u64) -> u64 {
    let mut x = key ^ 0x9e37_79b9_7f4a_7c15;
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Small per-handle generator for counter threshold redraws. Deterministic
/// from its seed; not used for key material.
#[derive(Clone, Debug)]
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw from `1..=bound`.
    pub fn next_in(&mut self, bound: u64) -> u64 {
        debug_assert!(bound >= 1);
        // Rejection-free widening multiply; bias is negligible for the small
        // bounds used here (bound <= thread count).
        1 + (((self.next_u64() as u128 * bound as u128) >> 64) as u64)
    }
}

/// The seeded stream generator used by all key sequences. ChaCha12 keeps
/// output identical across platforms and builds.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

const RNG_NAME: &str = "chacha12";

/// Zipf distribution over the universe `1..=n_universe` with exponent `s`:
/// `P(k) = 1 / (k^s * H)` where `H` is the generalized harmonic normalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct ZipfSpec {
    pub n_universe: u64,
    pub s: f64,
    pub seed: u64,
}

impl ZipfSpec {
    pub fn new(n_universe: u64, s: f64, seed: u64) -> Self {
        assert!(n_universe >= 1);
        assert!(s >= 0.0 && s.is_finite());
        ZipfSpec { n_universe, s, seed }
    }

    /// The normalizer `H = sum_{k=1..N} k^-s` by direct summation.
    pub fn harmonic(&self) -> f64 {
        harmonic_sum(self.n_universe, self.s)
    }

    /// Exact probability of key `k`.
    pub fn probability(&self, k: u64) -> f64 {
        assert!(k >= 1 && k <= self.n_universe);
        1.0 / ((k as f64).powf(self.s) * self.harmonic())
    }
}

pub fn harmonic_sum(n: u64, s: f64) -> f64 {
    // Summed small-to-large so the tiny tail terms are not swallowed.
    let mut h = 0.0f64;
    let mut k = n;
    while k >= 1 {
        h += 1.0 / (k as f64).powf(s);
        k -= 1;
    }
    h
}

/// An immutable pregenerated key sequence plus the description that
/// regenerates it.
#[derive(Clone, Debug)]
pub struct KeySequence {
    pub keys: Vec<u64>,
    pub provenance: String,
}

impl KeySequence {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

fn uniform_user_key(rng: &mut ChaCha12Rng) -> u64 {
    // Uniform over [1, MAX_USER_KEY] by rejection on the excluded residue.
    loop {
        let x = rng.next_u64() & !(1 << 63); // 0..2^63-1
        if (1..=MAX_USER_KEY).contains(&x) {
            return x;
        }
    }
}

/// `n` independent uniform draws from the user key space. Duplicates are
/// possible (and at 2^63 keys, astronomically unlikely).
pub fn gen_uniform(n: usize, seed: u64) -> KeySequence {
    let mut rng = seeded_rng(seed);
    let keys = (0..n).map(|_| uniform_user_key(&mut rng)).collect();
    KeySequence { keys, provenance: format!("uniform(n={n},seed={seed},rng={RNG_NAME})") }
}

/// Like [`gen_uniform`] but rejecting duplicates, for insert benchmarks that
/// need every key fresh.
pub fn gen_uniform_distinct(n: usize, seed: u64) -> KeySequence {
    let mut rng = seeded_rng(seed);
    let mut seen = std::collections::HashSet::with_capacity(n * 2);
    let mut keys = Vec::with_capacity(n);
    while keys.len() < n {
        let k = uniform_user_key(&mut rng);
        if seen.insert(k) {
            keys.push(k);
        }
    }
    KeySequence { keys, provenance: format!("uniform-distinct(n={n},seed={seed},rng={RNG_NAME})") }
}

/// `n` draws from the Zipf distribution via an exact inverse-CDF table and
/// binary search; no approximation sampler.
pub fn gen_zipf(n: usize, spec: &ZipfSpec) -> KeySequence {
    let cdf = zipf_cdf(spec);
    let mut rng = seeded_rng(spec.seed);
    let keys = (0..n)
        .map(|_| {
            let u = unit_f64(rng.next_u64());
            // First index whose cumulative probability exceeds u.
            let idx = cdf.partition_point(|&c| c <= u);
            (idx as u64).min(spec.n_universe - 1) + 1
        })
        .collect();
    KeySequence {
        keys,
        provenance: format!(
            "zipf(n={n},N={},s={},seed={},rng={RNG_NAME})",
            spec.n_universe, spec.s, spec.seed
        ),
    }
}

/// Cumulative probabilities for keys `1..=N`, normalized so the final entry
/// is exactly 1.
pub fn zipf_cdf(spec: &ZipfSpec) -> Vec<f64> {
    let n = spec.n_universe as usize;
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    for k in 1..=n as u64 {
        acc += 1.0 / (k as f64).powf(spec.s);
        cdf.push(acc);
    }
    let total = acc;
    for c in &mut cdf {
        *c /= total;
    }
    cdf
}

#[inline]
fn unit_f64(bits: u64) -> f64 {
    // 53 random bits into [0, 1).
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const DUMP_MAGIC: &[u8; 8] = b"GTKEYS01";

/// Writes a key sequence in the binary dump format: 8-byte magic, 64-bit
/// little-endian count, then the keys as 64-bit little-endian words.
pub fn write_key_dump<W: Write>(out: &mut W, keys: &[u64]) -> io::Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&(keys.len() as u64).to_le_bytes())?;
    for k in keys {
        out.write_all(&k.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a key dump written by [`write_key_dump`].
pub fn read_key_dump<R: Read>(input: &mut R) -> io::Result<Vec<u64>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad key dump magic"));
    }
    let mut count_bytes = [0u8; 8];
    input.read_exact(&mut count_bytes)?;
    let count = u64::from_le_bytes(count_bytes) as usize;
    let mut keys = Vec::with_capacity(count);
    let mut word = [0u8; 8];
    for _ in 0..count {
        input.read_exact(&mut word)?;
        keys.push(u64::from_le_bytes(word));
    }
    Ok(keys)
}
