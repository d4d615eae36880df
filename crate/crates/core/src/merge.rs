//! Combines per-partition alignments into one record per read.
//!
//! Selection: highest score, then smallest reference position, then smallest
//! partition id. Two partitions reporting the same read at the same position
//! agree when their scores match; otherwise the partition whose core holds
//! that position decides (an alignment starting inside an overlap is clipped
//! by the segment end in the other partition).

use std::collections::HashMap;

use thiserror::Error;

use crate::align::AlignmentRecord;
use crate::refprep::SegmentSpan;
use crate::sealvault::{user_encrypt_input, RootSecret, SealError, SealedBlob};
use crate::seqio::{self, ReadKey, ReadRecord, SamRecord};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("read {read} has conflicting scores at position {global_pos}")]
    ConflictingDuplicates { read: String, global_pos: u64 },
    #[error("alignment for unknown read {0}")]
    UnknownRead(String),
    #[error(transparent)]
    Seal(#[from] SealError),
}

fn describe(key: &ReadKey) -> String {
    match key.mate {
        Some(m) => format!("{}{}", key.id, m.suffix()),
        None => key.id.clone(),
    }
}

fn resolve_same_position<'a>(
    key: &ReadKey,
    group: &[&'a AlignmentRecord],
    layout: Option<&[SegmentSpan]>,
) -> Result<&'a AlignmentRecord, MergeError> {
    let first = group[0];
    if group.iter().all(|r| r.score == first.score) {
        return Ok(group.iter().min_by_key(|r| r.partition_id).copied().unwrap_or(first));
    }
    let conflict = || MergeError::ConflictingDuplicates {
        read: describe(key),
        global_pos: first.global_pos,
    };
    let layout = layout.ok_or_else(conflict)?;
    let owner = layout
        .iter()
        .find(|s| s.core_contains(first.global_pos - 1))
        .ok_or_else(conflict)?;
    group
        .iter()
        .find(|r| r.partition_id == owner.partition_id)
        .copied()
        .ok_or_else(conflict)
}

/// One record per input read, in input order. Reads with no mapped
/// alignment in any partition come out unmapped.
pub fn merge(
    reads: &[ReadRecord],
    per_partition: &[Vec<AlignmentRecord>],
    layout: Option<&[SegmentSpan]>,
) -> Result<Vec<AlignmentRecord>, MergeError> {
    let mut candidates: HashMap<ReadKey, Vec<&AlignmentRecord>> =
        reads.iter().map(|r| (r.key(), Vec::new())).collect();
    for rec in per_partition.iter().flatten() {
        let slot = candidates
            .get_mut(&rec.key())
            .ok_or_else(|| MergeError::UnknownRead(describe(&rec.key())))?;
        if rec.mapped {
            slot.push(rec);
        }
    }

    let mut chosen: HashMap<ReadKey, AlignmentRecord> = HashMap::with_capacity(candidates.len());
    for (key, mut recs) in candidates {
        if recs.is_empty() {
            continue;
        }
        recs.sort_by_key(|r| (r.global_pos, r.partition_id));
        let mut best: Option<&AlignmentRecord> = None;
        for group in recs.chunk_by(|a, b| a.global_pos == b.global_pos) {
            let rep = resolve_same_position(&key, group, layout)?;
            // groups arrive in ascending position, so strict > keeps the smallest
            if best.map_or(true, |b| rep.score > b.score) {
                best = Some(rep);
            }
        }
        if let Some(b) = best {
            chosen.insert(key, b.clone());
        }
    }

    Ok(reads
        .iter()
        .map(|r| {
            chosen
                .get(&r.key())
                .cloned()
                .unwrap_or_else(|| AlignmentRecord::unmapped(r, 0))
        })
        .collect())
}

/// SAM records in reference coordinates for merged alignments.
pub fn to_sam(merged: &[AlignmentRecord], reads: &[ReadRecord], ref_name: &str) -> Vec<SamRecord> {
    merged
        .iter()
        .zip(reads)
        .map(|(a, r)| {
            let flag = seqio::mate_flags(a.mate);
            if a.mapped {
                SamRecord {
                    qname: a.read_id.clone(),
                    flag,
                    rname: ref_name.to_string(),
                    pos: a.global_pos,
                    mapq: seqio::MAPQ_UNAVAILABLE,
                    cigar: a.cigar.clone(),
                    seq: r.seq.clone(),
                    qual: r.qual.clone(),
                    score: Some(a.score),
                }
            } else {
                SamRecord::unmapped(a.read_id.clone(), flag, r.seq.clone(), r.qual.clone())
            }
        })
        .collect()
}

/// Final SAM text for a merged run.
pub fn final_sam(merged: &[AlignmentRecord], reads: &[ReadRecord], ref_name: &str, ref_len: u64) -> Vec<u8> {
    seqio::sam_bytes(&to_sam(merged, reads, ref_name), &[(ref_name.to_string(), ref_len)])
}

/// Final SAM sealed under the user's key.
pub fn finalize(
    merged: &[AlignmentRecord],
    reads: &[ReadRecord],
    ref_name: &str,
    ref_len: u64,
    user_key: &RootSecret,
) -> Result<SealedBlob, MergeError> {
    Ok(user_encrypt_input(&final_sam(merged, reads, ref_name, ref_len), user_key)?)
}
