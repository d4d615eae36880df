//! Classic Bloom filter with double hashing.
//!
//! Bit positions are `(h1 + i * h2) mod m` for `i in 0..k`, where `h1` and `h2`
//! are two seeded XXH3 hashes of the element. `m` is always a power of two so
//! the modulo is a mask; any requested size is rounded up.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! "HSBF" | version u16 | partition_id u32 | m u64 | k u32 | seed u64
//!        | params_fingerprint [u8; 32] | n_inserted u64 | bits [u8; ceil(m/8)]
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const MAGIC: &[u8; 4] = b"HSBF";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_SEED: u64 = 0x4859_5345_4346_4c57;
pub const DEFAULT_HASHES: u32 = 3;
pub const DEFAULT_BITS_PER_ELEMENT: f64 = 12.0;

// Mixed into the seed for the second hash so h1 and h2 are independent.
const SECOND_HASH_TWEAK: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum BloomError {
    #[error("not a bloom filter file (bad magic)")]
    BadMagic,
    #[error("unsupported bloom filter format version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid bloom filter parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SHA-256 digest identifying the inputs a filter was built from.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Short prefix used in file names.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..8])
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.short())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    m: u64,
    k: u32,
    seed: u64,
    n_inserted: u64,
    partition_id: u32,
    fingerprint: Fingerprint,
}

impl fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BloomFilter")
            .field("partition_id", &self.partition_id)
            .field("m", &self.m)
            .field("k", &self.k)
            .field("n_inserted", &self.n_inserted)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

/// Rounds a requested bit count up to the power of two actually used.
pub fn effective_bits(requested: u64) -> u64 {
    requested.max(1).next_power_of_two()
}

impl BloomFilter {
    pub fn new(requested_bits: u64, k: u32, seed: u64) -> Result<Self, BloomError> {
        if k == 0 {
            return Err(BloomError::InvalidParams("k must be at least 1".into()));
        }
        if requested_bits > 1 << 40 {
            return Err(BloomError::InvalidParams(format!("m = {requested_bits} is too large")));
        }
        let m = effective_bits(requested_bits);
        Ok(Self {
            words: vec![0; m.div_ceil(64) as usize],
            m,
            k,
            seed,
            n_inserted: 0,
            partition_id: 0,
            fingerprint: Fingerprint::default(),
        })
    }

    pub fn with_partition(mut self, partition_id: u32) -> Self {
        self.partition_id = partition_id;
        self
    }

    pub fn with_fingerprint(mut self, fingerprint: Fingerprint) -> Self {
        self.fingerprint = fingerprint;
        self
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_inserted(&self) -> u64 {
        self.n_inserted
    }

    pub fn partition_id(&self) -> u32 {
        self.partition_id
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    #[inline]
    fn positions(&self, element: &[u8]) -> impl Iterator<Item = u64> {
        let h1 = xxh3_64_with_seed(element, self.seed);
        // odd step so the k probes never collapse onto a short cycle mod 2^j
        let h2 = xxh3_64_with_seed(element, self.seed ^ SECOND_HASH_TWEAK) | 1;
        let mask = self.m - 1;
        (0..u64::from(self.k)).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) & mask)
    }

    pub fn insert(&mut self, element: &[u8]) {
        debug_assert!(!element.is_empty(), "bloom elements must be nonempty");
        let positions: Vec<u64> = self.positions(element).collect();
        for p in positions {
            self.words[(p >> 6) as usize] |= 1 << (p & 63);
        }
        self.n_inserted += 1;
    }

    /// `false` means definitely absent; `true` means possibly present.
    pub fn contains(&self, element: &[u8]) -> bool {
        self.positions(element)
            .all(|p| self.words[(p >> 6) as usize] & (1 << (p & 63)) != 0)
    }

    /// Estimated false-positive rate given the current fill.
    pub fn expected_fpr(&self) -> f64 {
        fpr_estimate(self.m, self.k, self.n_inserted)
    }

    pub fn size_bytes(&self) -> usize {
        self.m.div_ceil(8) as usize
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.partition_id.to_le_bytes())?;
        w.write_all(&self.m.to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.fingerprint.0)?;
        w.write_all(&self.n_inserted.to_le_bytes())?;
        let n_bytes = self.size_bytes();
        let mut bits = Vec::with_capacity(self.words.len() * 8);
        for word in &self.words {
            bits.extend_from_slice(&word.to_le_bytes());
        }
        w.write_all(&bits[..n_bytes])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(70 + self.size_bytes());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BloomError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(BloomError::BadMagic);
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(BloomError::UnsupportedVersion(version));
        }
        let partition_id = u32::from_le_bytes(read_array(&mut r)?);
        let m = u64::from_le_bytes(read_array(&mut r)?);
        let k = u32::from_le_bytes(read_array(&mut r)?);
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let fingerprint = Fingerprint(read_array(&mut r)?);
        let n_inserted = u64::from_le_bytes(read_array(&mut r)?);
        if !m.is_power_of_two() || k == 0 || m > 1 << 40 {
            return Err(BloomError::InvalidParams(format!("m = {m}, k = {k}")));
        }
        let n_bytes = m.div_ceil(8) as usize;
        let mut bits = vec![0u8; n_bytes];
        r.read_exact(&mut bits)?;
        let mut words = vec![0u64; m.div_ceil(64) as usize];
        for (i, chunk) in bits.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            words[i] = u64::from_le_bytes(buf);
        }
        Ok(Self {
            words,
            m,
            k,
            seed,
            n_inserted,
            partition_id,
            fingerprint,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BloomError> {
        Self::read_from(bytes)
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Exact false-positive probability `(1 - (1 - 1/m)^(kn))^k`.
pub fn fpr_estimate(m: u64, k: u32, n: u64) -> f64 {
    if n == 0 || m == 0 {
        return 0.0;
    }
    let kn = f64::from(k) * n as f64;
    // (1 - 1/m)^(kn) via ln1p keeps precision for large m
    let all_zero = (kn * (-1.0 / m as f64).ln_1p()).exp();
    (1.0 - all_zero).powi(k as i32)
}

/// Large-m approximation `(1 - e^(-k/r))^k` with `r = m/n`.
pub fn fpr_approx(m: u64, k: u32, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let r = m as f64 / n as f64;
    (1.0 - (-f64::from(k) / r).exp()).powi(k as i32)
}

/// Bits to request for `n` elements at `bits_per_element`.
pub fn bits_for(n: u64, bits_per_element: f64) -> u64 {
    ((n as f64 * bits_per_element).ceil() as u64).max(64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rounds_to_power_of_two() {
        assert_eq!(BloomFilter::new(1000, 3, 0).unwrap().m(), 1024);
        assert_eq!(BloomFilter::new(1024, 3, 0).unwrap().m(), 1024);
        assert_eq!(BloomFilter::new(1, 3, 0).unwrap().m(), 1);
        assert!(BloomFilter::new(1024, 0, 0).is_err());
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = BloomFilter::new(1024, 3, 7).unwrap();
        assert!(!f.contains(b"ACGT"));
        assert!(!f.contains(b"anything"));
    }

    #[test]
    fn insert_then_test() {
        let mut f = BloomFilter::new(1024, 3, 7).unwrap();
        f.insert(b"ACGTACGT");
        assert!(f.contains(b"ACGTACGT"));
        assert_eq!(f.n_inserted(), 1);
        assert!((1..=3).contains(&f.popcount()));
    }

    #[test]
    fn insert_is_idempotent_on_bits() {
        let mut once = BloomFilter::new(4096, 3, 1).unwrap();
        once.insert(b"GATTACA");
        let mut twice = once.clone();
        twice.insert(b"GATTACA");
        assert_eq!(once.words, twice.words);
        assert_eq!(twice.n_inserted(), 2);
    }

    #[test]
    fn fpr_closed_form() {
        assert_eq!(fpr_estimate(1024, 3, 0), 0.0);
        let exact = fpr_estimate(1024, 3, 128);
        let approx = fpr_approx(1024, 3, 128);
        // (1 - e^(-3/8))^3
        assert!((approx - 0.030579).abs() < 1e-5, "{approx}");
        assert!((exact - 0.0306).abs() < 1e-4, "{exact}");
        assert!(fpr_estimate(1, 3, 1) == 1.0);
    }

    #[test]
    fn fpr_decreases_to_zero_in_m() {
        let mut prev = 1.0;
        for shift in 8..40 {
            let f = fpr_estimate(1u64 << shift, 3, 1000);
            assert!(f <= prev);
            prev = f;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn empirical_fpr_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = 1024u64;
        let n = 128u64;
        let mut f = BloomFilter::new(m, 3, DEFAULT_SEED).unwrap();
        let mut members = std::collections::HashSet::new();
        while (members.len() as u64) < n {
            let x: u64 = rng.gen();
            if members.insert(x) {
                f.insert(&x.to_le_bytes());
            }
        }
        let mut fp = 0u32;
        let mut total = 0u32;
        while total < 100_000 {
            let q: u64 = rng.gen();
            if members.contains(&q) {
                continue;
            }
            total += 1;
            fp += u32::from(f.contains(&q.to_le_bytes()));
        }
        let empirical = f64::from(fp) / f64::from(total);
        let expected = fpr_estimate(m, 3, n);
        assert!(
            ((empirical - expected) / expected).abs() < 0.15,
            "empirical {empirical} vs {expected}"
        );
    }

    #[test]
    fn bad_file_is_rejected() {
        assert!(matches!(BloomFilter::from_bytes(b"XXXX\x01\x00"), Err(BloomError::BadMagic)));
        let mut bytes = BloomFilter::new(64, 3, 0).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(BloomFilter::from_bytes(&bytes), Err(BloomError::Io(_))));
    }

    proptest! {
        #[test]
        fn no_false_negatives(elems in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..40), 1..200),
                              log_m in 6u32..16, k in 1u32..8, seed: u64) {
            let mut f = BloomFilter::new(1u64 << log_m, k, seed).unwrap();
            for e in &elems {
                f.insert(e);
            }
            for e in &elems {
                prop_assert!(f.contains(e));
                prop_assert!(f.contains(e), "contains must be pure");
            }
            prop_assert!(f.popcount() <= u64::from(k) * f.n_inserted());
        }

        #[test]
        fn serialization_round_trip(elems in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..20), 0..50),
                                    log_m in 0u32..14, part: u32, fp: [u8; 32]) {
            let mut f = BloomFilter::new(1u64 << log_m, 3, 99).unwrap()
                .with_partition(part)
                .with_fingerprint(Fingerprint(fp));
            for e in &elems {
                f.insert(e);
            }
            let bytes = f.to_bytes();
            prop_assert_eq!(bytes.len(), 70 + (1usize << log_m).div_ceil(8));
            let back = BloomFilter::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn random_keys_fill_reasonably() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = BloomFilter::new(1 << 12, 3, 5).unwrap();
        for _ in 0..300 {
            let x: u64 = rng.gen();
            f.insert(&x.to_le_bytes());
        }
        let expected = (1.0 - (1.0 - 1.0 / 4096f64).powf(900.0)) * 4096.0;
        let got = f.popcount() as f64;
        assert!((got - expected).abs() / expected < 0.1, "{got} vs {expected}");
    }
}
