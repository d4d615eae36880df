//! Secure-side read dispatch: a read goes to every partition whose filter
//! reports at least one of the read's b-mers.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::bloom::{BloomFilter, Fingerprint};
use crate::refprep::{grid_offsets, has_n, FilterSpec};
use crate::sealvault::{KeyPolicy, SealError, SealedBlob, Vault};
use crate::seqio::{self, ReadRecord, SeqError};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("bloom filter for partition {partition} is stale: fingerprint {found:?}, expected {expected:?}")]
    FingerprintMismatch {
        partition: u32,
        expected: Fingerprint,
        found: Fingerprint,
    },
    #[error("filter parameters (m = {m}, k = {k}) do not match the dispatch configuration")]
    ParamMismatch { m: u64, k: u32 },
    #[error("unsealing dispatch input failed: {0}")]
    UnsealFailure(#[source] SealError),
    #[error("sealing dispatch output failed: {0}")]
    SealFailure(#[source] SealError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

/// Which read windows are tested against the filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadScan {
    /// Every b-length window of the read. Any exact match of length
    /// `b + stride - 1` with the reference is guaranteed to be found.
    #[default]
    Full,
    /// Windows on the same `b - l` grid as the filters, plus the final window.
    /// Cheaper, but only finds matches whose phase lines up with the grid.
    Grid,
}

impl std::str::FromStr for ReadScan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ReadScan::Full),
            "grid" => Ok(ReadScan::Grid),
            other => Err(format!("unknown read scan {other:?} (expected full or grid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchedQuery {
    pub partition_id: u32,
    pub reads: Vec<ReadRecord>,
}

pub fn read_bmer_offsets(len: usize, b: usize, stride: usize, scan: ReadScan) -> Box<dyn Iterator<Item = usize>> {
    match scan {
        ReadScan::Full => Box::new(0..(len + 1).saturating_sub(b)),
        ReadScan::Grid => Box::new(grid_offsets(len, b, stride)),
    }
}

/// True on the first b-mer of `seq` the filter reports.
pub fn read_hits(filter: &BloomFilter, seq: &[u8], spec: &FilterSpec, scan: ReadScan) -> bool {
    let b = spec.params.b;
    read_bmer_offsets(seq.len(), b, spec.params.stride(), scan).any(|off| {
        let bmer = &seq[off..off + b];
        !has_n(bmer) && filter.contains(bmer)
    })
}

pub fn check_filter(filter: &BloomFilter, spec: &FilterSpec) -> Result<(), DispatchError> {
    let expected = spec.fingerprint();
    if filter.fingerprint() != expected {
        return Err(DispatchError::FingerprintMismatch {
            partition: filter.partition_id(),
            expected,
            found: filter.fingerprint(),
        });
    }
    if filter.m() != spec.m || filter.k() != spec.k || filter.seed() != spec.seed {
        return Err(DispatchError::ParamMismatch {
            m: filter.m(),
            k: filter.k(),
        });
    }
    Ok(())
}

/// Order-preserving subset of `reads` that hit `filter`. Each read appears at
/// most once.
pub fn dispatch(
    filter: &BloomFilter,
    reads: &[ReadRecord],
    spec: &FilterSpec,
    scan: ReadScan,
) -> Result<DispatchedQuery, DispatchError> {
    check_filter(filter, spec)?;
    let reads = reads
        .iter()
        .filter(|r| read_hits(filter, &r.seq, spec, scan))
        .cloned()
        .collect();
    Ok(DispatchedQuery {
        partition_id: filter.partition_id(),
        reads,
    })
}

/// Partitions a pair goes to: the union of the partitions hit by either mate,
/// ascending.
pub fn dispatch_pair(
    filters: &[BloomFilter],
    pair: (&ReadRecord, &ReadRecord),
    spec: &FilterSpec,
    scan: ReadScan,
) -> Result<Vec<u32>, DispatchError> {
    let mut hit = BTreeSet::new();
    for f in filters {
        check_filter(f, spec)?;
        if read_hits(f, &pair.0.seq, spec, scan) || read_hits(f, &pair.1.seq, spec, scan) {
            hit.insert(f.partition_id());
        }
    }
    Ok(hit.into_iter().collect())
}

/// Pair-aware dispatch against one filter: `reads` alternates mate 1, mate 2,
/// and a pair is kept whole when either mate hits.
pub fn dispatch_pairs(
    filter: &BloomFilter,
    reads: &[ReadRecord],
    spec: &FilterSpec,
    scan: ReadScan,
) -> Result<DispatchedQuery, DispatchError> {
    check_filter(filter, spec)?;
    let mut out = Vec::new();
    for pair in reads.chunks(2) {
        if pair.iter().any(|r| read_hits(filter, &r.seq, spec, scan)) {
            out.extend_from_slice(pair);
        }
    }
    Ok(DispatchedQuery {
        partition_id: filter.partition_id(),
        reads: out,
    })
}

/// The secure dispatch task: unseal the reads, dispatch against one filter,
/// and return the partition's reads as a sealed FASTQ blob.
pub fn dispatch_sealed(
    filter: &BloomFilter,
    sealed_reads: &[u8],
    vault: &Vault,
    policy: &KeyPolicy,
    spec: &FilterSpec,
    scan: ReadScan,
    paired: bool,
) -> Result<(DispatchedQuery, SealedBlob), DispatchError> {
    let plain = vault.unseal(sealed_reads, policy).map_err(DispatchError::UnsealFailure)?;
    let reads = seqio::parse_fastq(&plain[..])
        .with_mate_suffixes(paired)
        .collect::<Result<Vec<_>, _>>()?;
    let q = if paired {
        dispatch_pairs(filter, &reads, spec, scan)?
    } else {
        dispatch(filter, &reads, spec, scan)?
    };
    let mut fastq = Vec::new();
    seqio::write_fastq(&mut fastq, &q.reads).expect("writing to a Vec cannot fail");
    let blob = vault.seal(&fastq, policy).map_err(DispatchError::SealFailure)?;
    Ok((q, blob))
}
