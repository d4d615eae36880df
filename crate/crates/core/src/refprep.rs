//! One-time, non-secure preparation of the public reference: overlapping
//! partitions, a k-mer postings index per partition, and one Bloom filter of
//! b-mers per partition.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::bloom::{self, BloomError, BloomFilter, Fingerprint};
use crate::seqio::ReferenceGenome;

pub const INDEX_MAGIC: &[u8; 4] = b"HSIX";
pub const INDEX_VERSION: u16 = 1;
pub const MAX_SEED_LENGTH: usize = 32;

pub const DEFAULT_BMER: usize = 25;
pub const DEFAULT_BMER_OVERLAP: usize = 15;
pub const DEFAULT_SEED_LENGTH: usize = 16;

#[derive(Debug, Error)]
pub enum RefPrepError {
    #[error("invalid partitioning: {0}")]
    InvalidPartitioning(String),
    #[error("invalid dispatch parameters: {0}")]
    InvalidParams(String),
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, PartialEq, Eq)]
pub struct ReferenceSegment {
    pub partition_id: u32,
    pub sequence: Vec<u8>,
    /// 0-based reference coordinate of `sequence[0]`.
    pub global_offset: u64,
    pub core_length: u64,
    /// Bases borrowed from the next segment's core.
    pub overlap: u64,
}

impl std::fmt::Debug for ReferenceSegment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceSegment")
            .field("partition_id", &self.partition_id)
            .field("global_offset", &self.global_offset)
            .field("core_length", &self.core_length)
            .field("overlap", &self.overlap)
            .finish()
    }
}

impl ReferenceSegment {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn span(&self) -> SegmentSpan {
        SegmentSpan {
            partition_id: self.partition_id,
            global_offset: self.global_offset,
            core_length: self.core_length,
            overlap: self.overlap,
        }
    }

    /// Cheap identity check used to match an index to its segment.
    pub fn checksum(&self) -> u64 {
        xxh3_64(&self.sequence)
    }

    pub fn name(&self) -> String {
        format!("part_{}", self.partition_id)
    }
}

/// Coordinates of a segment without its bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub partition_id: u32,
    pub global_offset: u64,
    pub core_length: u64,
    pub overlap: u64,
}

impl SegmentSpan {
    /// Whether the 0-based reference coordinate lies in this segment's core.
    pub fn core_contains(&self, global: u64) -> bool {
        global >= self.global_offset && global < self.global_offset + self.core_length
    }

    pub fn len(&self) -> u64 {
        self.core_length + self.overlap
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits the reference into `p` balanced cores (lengths differ by at most
/// one), each extended right by `overlap` bases of its neighbour.
pub fn partition_reference(
    genome: &ReferenceGenome,
    p: usize,
    overlap: usize,
) -> Result<Vec<ReferenceSegment>, RefPrepError> {
    let len = genome.len();
    if p == 0 {
        return Err(RefPrepError::InvalidPartitioning("partition count must be at least 1".into()));
    }
    if p > len {
        return Err(RefPrepError::InvalidPartitioning(format!(
            "{p} partitions requested for a {len}-base reference"
        )));
    }
    let max_core = len.div_ceil(p);
    if p > 1 && overlap >= max_core {
        return Err(RefPrepError::InvalidPartitioning(format!(
            "overlap {overlap} must be smaller than the partition size {max_core}"
        )));
    }
    let base = len / p;
    let extra = len % p;
    let mut segments = Vec::with_capacity(p);
    let mut start = 0usize;
    for i in 0..p {
        let core = base + usize::from(i < extra);
        let end = start + core;
        let ov = if i + 1 < p { overlap.min(len - end) } else { 0 };
        segments.push(ReferenceSegment {
            partition_id: i as u32,
            sequence: genome.sequence[start..end + ov].to_vec(),
            global_offset: start as u64,
            core_length: core as u64,
            overlap: ov as u64,
        });
        start = end;
    }
    debug_assert_eq!(start, len);
    Ok(segments)
}

/// Digest of the partition layout: reference content plus `(p, overlap)`.
/// Filter fingerprints are scoped by this.
pub fn layout_id(genome: &ReferenceGenome, p: usize, overlap: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hysec-layout-v1");
    h.update((genome.name.len() as u64).to_le_bytes());
    h.update(genome.name.as_bytes());
    h.update(Sha256::digest(&genome.sequence));
    h.update((p as u64).to_le_bytes());
    h.update((overlap as u64).to_le_bytes());
    h.finalize().into()
}

/// b-mer length and the overlap between consecutive b-mers; the stride is
/// `b - l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchParams {
    pub b: usize,
    pub l: usize,
    pub p: usize,
}

impl DispatchParams {
    pub fn new(b: usize, l: usize, p: usize) -> Result<Self, RefPrepError> {
        let params = Self { b, l, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), RefPrepError> {
        if self.b == 0 {
            return Err(RefPrepError::InvalidParams("b must be at least 1".into()));
        }
        if self.l >= self.b {
            return Err(RefPrepError::InvalidParams(format!(
                "b-mer overlap l = {} must be smaller than b = {}",
                self.l, self.b
            )));
        }
        if self.p == 0 {
            return Err(RefPrepError::InvalidParams("p must be at least 1".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.b - self.l
    }
}

/// Start offsets of the b-mers taken from a sequence of length `len` at the
/// given stride, plus the final window flush with the end.
pub fn grid_offsets(len: usize, b: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    let last = if len >= b { Some(len - b) } else { None };
    let grid_end = last.map(|l| l / stride * stride);
    let grid = last.into_iter().flat_map(move |l| (0..=l).step_by(stride));
    let tail = match (last, grid_end) {
        (Some(l), Some(g)) if g != l => Some(l),
        _ => None,
    };
    grid.chain(tail)
}

pub fn has_n(s: &[u8]) -> bool {
    s.contains(&b'N')
}

/// Everything a filter's fingerprint is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    pub layout_id: [u8; 32],
    pub params: DispatchParams,
    /// Effective (power-of-two) bit count.
    pub m: u64,
    pub k: u32,
    pub seed: u64,
}

impl FilterSpec {
    pub fn new(layout_id: [u8; 32], params: DispatchParams, requested_m: u64, k: u32, seed: u64) -> Self {
        Self {
            layout_id,
            params,
            m: bloom::effective_bits(requested_m),
            k,
            seed,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(b"hysec-bloom-v1");
        h.update(self.layout_id);
        h.update((self.params.b as u64).to_le_bytes());
        h.update((self.params.l as u64).to_le_bytes());
        h.update(self.m.to_le_bytes());
        h.update(self.k.to_le_bytes());
        Fingerprint(h.finalize().into())
    }

    pub fn file_name(&self, partition_id: u32) -> String {
        format!("{}_part_{}.hsbf", self.fingerprint().short(), partition_id)
    }
}

/// Bit count giving about `bits_per_element` for the largest segment.
pub fn default_bloom_bits(segments: &[ReferenceSegment], params: &DispatchParams, bits_per_element: f64) -> u64 {
    let n = segments
        .iter()
        .map(|s| grid_offsets(s.len(), params.b, params.stride()).count() as u64)
        .max()
        .unwrap_or(0);
    bloom::bits_for(n, bits_per_element)
}

/// Builds one segment's filter from its b-mer grid, skipping b-mers with `N`.
pub fn build_filter(segment: &ReferenceSegment, spec: &FilterSpec) -> Result<BloomFilter, RefPrepError> {
    let b = spec.params.b;
    let mut filter = BloomFilter::new(spec.m, spec.k, spec.seed)?
        .with_partition(segment.partition_id)
        .with_fingerprint(spec.fingerprint());
    for off in grid_offsets(segment.len(), b, spec.params.stride()) {
        let bmer = &segment.sequence[off..off + b];
        if !has_n(bmer) {
            filter.insert(bmer);
        }
    }
    Ok(filter)
}

pub fn generate_bloom_filters(
    segments: &[ReferenceSegment],
    spec: &FilterSpec,
) -> Result<Vec<BloomFilter>, RefPrepError> {
    spec.params.validate()?;
    if let Some(short) = segments.iter().find(|s| s.len() < spec.params.b) {
        return Err(RefPrepError::InvalidParams(format!(
            "b = {} exceeds the length of partition {} ({} bases)",
            spec.params.b,
            short.partition_id,
            short.len()
        )));
    }
    segments.iter().map(|s| build_filter(s, spec)).collect()
}

#[inline]
fn base_code(b: u8) -> Option<u64> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// 2-bit packs a k-mer of at most 32 bases; `None` if it contains `N`.
pub fn encode_kmer(kmer: &[u8]) -> Option<u64> {
    debug_assert!(kmer.len() <= MAX_SEED_LENGTH);
    kmer.iter().try_fold(0u64, |acc, &b| Some((acc << 2) | base_code(b)?))
}

pub fn decode_kmer(code: u64, len: usize) -> Vec<u8> {
    (0..len)
        .rev()
        .map(|i| b"ACGT"[((code >> (2 * i)) & 3) as usize])
        .collect()
}

/// Calls `f(offset, code)` for every `k`-window of `seq` free of `N`.
pub fn for_each_kmer(seq: &[u8], k: usize, mut f: impl FnMut(usize, u64)) {
    if k == 0 || k > MAX_SEED_LENGTH || seq.len() < k {
        return;
    }
    let mask = if k == 32 { u64::MAX } else { (1u64 << (2 * k)) - 1 };
    let mut code = 0u64;
    let mut valid = 0usize;
    for (i, &b) in seq.iter().enumerate() {
        match base_code(b) {
            Some(c) => {
                code = ((code << 2) | c) & mask;
                valid += 1;
            }
            None => {
                code = 0;
                valid = 0;
            }
        }
        if valid >= k {
            f(i + 1 - k, code);
        }
    }
}

/// s-mer postings over one segment, standing in for an FM-index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KmerIndex {
    pub partition_id: u32,
    pub seed_length: usize,
    pub segment_len: u64,
    pub segment_checksum: u64,
    postings: HashMap<u64, Vec<u32>>,
}

pub fn build_index(segment: &ReferenceSegment, seed_length: usize) -> Result<KmerIndex, RefPrepError> {
    if seed_length == 0 || seed_length > MAX_SEED_LENGTH {
        return Err(RefPrepError::InvalidParams(format!(
            "seed length {seed_length} outside 1..={MAX_SEED_LENGTH}"
        )));
    }
    if segment.len() > u32::MAX as usize {
        return Err(RefPrepError::InvalidParams("segment longer than 2^32 bases".into()));
    }
    let mut postings: HashMap<u64, Vec<u32>> = HashMap::new();
    // positions arrive in increasing order, so each list is already sorted
    for_each_kmer(&segment.sequence, seed_length, |pos, code| {
        postings.entry(code).or_default().push(pos as u32);
    });
    Ok(KmerIndex {
        partition_id: segment.partition_id,
        seed_length,
        segment_len: segment.len() as u64,
        segment_checksum: segment.checksum(),
        postings,
    })
}

impl KmerIndex {
    pub fn lookup_code(&self, code: u64) -> &[u32] {
        self.postings.get(&code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lookup(&self, kmer: &[u8]) -> &[u32] {
        if kmer.len() != self.seed_length {
            return &[];
        }
        encode_kmer(kmer).map(|c| self.lookup_code(c)).unwrap_or(&[])
    }

    pub fn distinct_kmers(&self) -> usize {
        self.postings.len()
    }

    pub fn matches(&self, segment: &ReferenceSegment) -> bool {
        self.partition_id == segment.partition_id
            && self.segment_len == segment.len() as u64
            && self.segment_checksum == segment.checksum()
    }

    /// Decoded postings, sorted by k-mer.
    pub fn to_map(&self) -> BTreeMap<Vec<u8>, Vec<u32>> {
        self.postings
            .iter()
            .map(|(&c, p)| (decode_kmer(c, self.seed_length), p.clone()))
            .collect()
    }

    /// Approximate in-memory footprint, used as the declared working set.
    pub fn approx_bytes(&self) -> u64 {
        let positions: usize = self.postings.values().map(Vec::len).sum();
        (self.postings.len() * 48 + positions * 4) as u64
    }

    /// `"HSIX" | version u16 | partition_id u32 | s u32 | segment_len u64 |
    /// checksum u64 | n_keys u64 | { key u64 | count u32 | positions u32* }`
    /// with keys ascending.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&self.partition_id.to_le_bytes())?;
        w.write_all(&(self.seed_length as u32).to_le_bytes())?;
        w.write_all(&self.segment_len.to_le_bytes())?;
        w.write_all(&self.segment_checksum.to_le_bytes())?;
        w.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        let mut keys: Vec<u64> = self.postings.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let list = &self.postings[&key];
            w.write_all(&key.to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RefPrepError> {
        let bad = |m: &str| RefPrepError::InvalidIndex(m.to_string());
        let magic: [u8; 4] = read_array(&mut r)?;
        if &magic != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let partition_id = u32::from_le_bytes(read_array(&mut r)?);
        let seed_length = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if seed_length == 0 || seed_length > MAX_SEED_LENGTH {
            return Err(bad("seed length out of range"));
        }
        let segment_len = u64::from_le_bytes(read_array(&mut r)?);
        let segment_checksum = u64::from_le_bytes(read_array(&mut r)?);
        let n_keys = u64::from_le_bytes(read_array(&mut r)?);
        let mut postings = HashMap::with_capacity(n_keys.min(1 << 24) as usize);
        let mut prev: Option<u64> = None;
        for _ in 0..n_keys {
            let key = u64::from_le_bytes(read_array(&mut r)?);
            if prev.is_some_and(|p| p >= key) {
                return Err(bad("keys not strictly ascending"));
            }
            prev = Some(key);
            let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut list = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                list.push(u32::from_le_bytes(read_array(&mut r)?));
            }
            postings.insert(key, list);
        }
        Ok(Self {
            partition_id,
            seed_length,
            segment_len,
            segment_checksum,
            postings,
        })
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn genome(seq: &[u8]) -> ReferenceGenome {
        ReferenceGenome::new("g", seq.to_vec())
    }

    fn segment(seq: &[u8]) -> ReferenceSegment {
        ReferenceSegment {
            partition_id: 0,
            sequence: seq.to_vec(),
            global_offset: 0,
            core_length: seq.len() as u64,
            overlap: 0,
        }
    }

    fn random_seq(len: usize, seed: u64) -> Vec<u8> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect()
    }

    #[test]
    fn balanced_split() {
        let g = genome(&random_seq(1000, 1));
        let segs = partition_reference(&g, 4, 0).unwrap();
        let cores: Vec<u64> = segs.iter().map(|s| s.core_length).collect();
        let offsets: Vec<u64> = segs.iter().map(|s| s.global_offset).collect();
        assert_eq!(cores, [250, 250, 250, 250]);
        assert_eq!(offsets, [0, 250, 500, 750]);
    }

    #[test]
    fn split_with_overlap() {
        let g = genome(&random_seq(1000, 1));
        let segs = partition_reference(&g, 4, 99).unwrap();
        assert_eq!(segs[0].len(), 349);
        assert_eq!(segs[3].len(), 250);
        // brute force: every 100-base window lies wholly inside some segment
        for start in 0..=900u64 {
            assert!(
                segs.iter()
                    .any(|s| start >= s.global_offset && start + 100 <= s.global_offset + s.len() as u64),
                "window at {start} not covered"
            );
        }
    }

    #[test]
    fn single_partition_is_identity() {
        let seq = random_seq(321, 2);
        let segs = partition_reference(&genome(&seq), 1, 50).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].sequence, seq);
        assert_eq!(segs[0].overlap, 0);
    }

    #[test]
    fn invalid_partitioning() {
        let g = genome(b"ACGTACGT");
        assert!(partition_reference(&g, 9, 0).is_err());
        assert!(partition_reference(&g, 0, 0).is_err());
        assert!(partition_reference(&g, 2, 4).is_err());
        assert!(partition_reference(&g, 2, 3).is_ok());
    }

    #[test]
    fn genome_scale_partition_size() {
        // 3.2 GB reference at p = 80: partitions of about 40 MB, under 50 MB
        let len: u64 = 3_200_000_000;
        let core = len.div_ceil(80);
        assert!(core <= 50_000_000, "{core}");
    }

    #[test]
    fn index_examples() {
        let idx = build_index(&segment(b"ACGTACGT"), 4).unwrap();
        assert_eq!(idx.lookup(b"ACGT"), &[0, 4]);
        let idx = build_index(&segment(b"AAAA"), 2).unwrap();
        assert_eq!(idx.lookup(b"AA"), &[0, 1, 2]);
        let idx = build_index(&segment(b"ACNGT"), 2).unwrap();
        let keys: Vec<Vec<u8>> = idx.to_map().into_keys().collect();
        assert_eq!(keys, vec![b"AC".to_vec(), b"GT".to_vec()]);
    }

    #[test]
    fn kmer_codec() {
        for k in [1usize, 5, 16, 31, 32] {
            let s = random_seq(k, k as u64);
            assert_eq!(decode_kmer(encode_kmer(&s).unwrap(), k), s);
        }
        assert_eq!(encode_kmer(b"ACNT"), None);
    }

    #[test]
    fn bmer_grid() {
        let offs: Vec<usize> = grid_offsets(6, 4, 2).collect();
        assert_eq!(offs, [0, 2]);
        let offs: Vec<usize> = grid_offsets(7, 4, 2).collect();
        assert_eq!(offs, [0, 2, 3]);
        assert_eq!(grid_offsets(3, 4, 2).count(), 0);
        let offs: Vec<usize> = grid_offsets(4, 4, 10).collect();
        assert_eq!(offs, [0]);
    }

    #[test]
    fn filters_contain_their_bmers() {
        let seq = random_seq(2000, 5);
        let g = genome(&seq);
        let segs = partition_reference(&g, 3, 40).unwrap();
        let params = DispatchParams::new(25, 15, 3).unwrap();
        let spec = FilterSpec::new(layout_id(&g, 3, 40), params, 4096, 3, bloom::DEFAULT_SEED);
        let filters = generate_bloom_filters(&segs, &spec).unwrap();
        for (s, f) in segs.iter().zip(&filters) {
            assert_eq!(f.partition_id(), s.partition_id);
            assert_eq!(f.fingerprint(), spec.fingerprint());
            for off in grid_offsets(s.len(), 25, 10) {
                assert!(f.contains(&s.sequence[off..off + 25]));
            }
        }
        let again = generate_bloom_filters(&segs, &spec).unwrap();
        for (a, b) in filters.iter().zip(&again) {
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }

    #[test]
    fn small_filter_example() {
        let seg = segment(b"ACGTAC");
        let params = DispatchParams::new(4, 2, 1).unwrap();
        let spec = FilterSpec::new([0; 32], params, 1 << 12, 3, 1);
        let f = build_filter(&seg, &spec).unwrap();
        assert_eq!(f.n_inserted(), 2);
        assert!(f.contains(b"ACGT"));
        assert!(f.contains(b"GTAC"));
    }

    #[test]
    fn n_bmers_are_skipped() {
        let seg = segment(b"ACGTNACGTA");
        let params = DispatchParams::new(4, 3, 1).unwrap();
        let spec = FilterSpec::new([0; 32], params, 1 << 12, 3, 1);
        let f = build_filter(&seg, &spec).unwrap();
        // windows at 0 and 5, 6 are N-free
        assert_eq!(f.n_inserted(), 3);
    }

    #[test]
    fn fingerprint_scoping() {
        let p = DispatchParams::new(25, 15, 4).unwrap();
        let a = FilterSpec::new([1; 32], p, 1000, 3, 0);
        assert_eq!(a.m, 1024);
        assert_eq!(a.fingerprint(), FilterSpec::new([1; 32], p, 1024, 3, 0).fingerprint());
        let other_b = FilterSpec::new([1; 32], DispatchParams::new(24, 15, 4).unwrap(), 1000, 3, 0);
        assert_ne!(a.fingerprint(), other_b.fingerprint());
        assert_ne!(a.fingerprint(), FilterSpec::new([2; 32], p, 1000, 3, 0).fingerprint());
        assert_ne!(a.fingerprint(), FilterSpec::new([1; 32], p, 1000, 4, 0).fingerprint());
        assert!(DispatchParams::new(10, 10, 1).is_err());
    }

    #[test]
    fn index_file_round_trip() {
        let seg = segment(&random_seq(3000, 9));
        let idx = build_index(&seg, 12).unwrap();
        let bytes = idx.to_bytes();
        let back = KmerIndex::read_from(&bytes[..]).unwrap();
        assert_eq!(back, idx);
        assert!(back.matches(&seg));
        assert!(KmerIndex::read_from(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn coverage_by_overlap(len in 50usize..400, p in 1usize..8, read_len in 1usize..20, seed: u64) {
            let seq = random_seq(len, seed);
            let overlap = read_len - 1;
            prop_assume!(p <= len && (p == 1 || overlap < len.div_ceil(p)));
            let segs = partition_reference(&genome(&seq), p, overlap).unwrap();
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].global_offset + w[0].core_length, w[1].global_offset);
            }
            prop_assert_eq!(segs.iter().map(|s| s.core_length).sum::<u64>(), len as u64);
            let cores: Vec<u64> = segs.iter().map(|s| s.core_length).collect();
            prop_assert!(cores.iter().max().unwrap() - cores.iter().min().unwrap() <= 1);
            for start in 0..=(len.saturating_sub(read_len)) as u64 {
                // the segment whose core holds the start also holds the window
                let owner = segs.iter().find(|s| s.span().core_contains(start)).unwrap();
                prop_assert!(start + read_len as u64 <= owner.global_offset + owner.len() as u64);
                let local = (start - owner.global_offset) as usize;
                prop_assert_eq!(&owner.sequence[local..local + read_len], &seq[start as usize..start as usize + read_len]);
            }
        }

        #[test]
        fn index_matches_naive_scan(seq in "[ACGTN]{0,300}", s in 1usize..12) {
            let seg = segment(seq.as_bytes());
            let idx = build_index(&seg, s).unwrap();
            let mut naive: BTreeMap<Vec<u8>, Vec<u32>> = BTreeMap::new();
            let bytes = seq.as_bytes();
            if bytes.len() >= s {
                for pos in 0..=bytes.len() - s {
                    let w = &bytes[pos..pos + s];
                    if !w.contains(&b'N') {
                        naive.entry(w.to_vec()).or_default().push(pos as u32);
                    }
                }
            }
            prop_assert_eq!(idx.to_map(), naive);
        }
    }
}
