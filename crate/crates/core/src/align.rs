//! Seed-and-extend read alignment against one partition.
//!
//! Seeds are every `N`-free s-mer of the read (stride 1). Their reference hits
//! vote for diagonals (`ref_pos - read_pos`); diagonals closer than the band
//! width are clustered, and each cluster is extended with a banded affine-gap
//! DP that aligns the whole read (end to end) against any reference interval.
//! The best cluster result above `min_report_score` is reported.
//!
//! Gaps of length `n` cost `gap_open + n * gap_extend`.

use std::io;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refprep::{for_each_kmer, KmerIndex, ReferenceSegment, SegmentSpan};
use crate::seqio::{self, flags, Mate, ReadKey, ReadRecord, SeqError};

pub const UNMAPPED_SCORE: i32 = i32::MIN;
const NEG: i32 = i32::MIN / 4;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("index for partition {index_partition} does not match segment {segment_partition}")]
    IndexSegmentMismatch {
        index_partition: u32,
        segment_partition: u32,
    },
    #[error("invalid scoring scheme: {0}")]
    InvalidScoring(String),
    #[error("external aligner failed ({status}): {stderr}")]
    ExternalToolFailure { status: String, stderr: String },
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringScheme {
    #[serde(rename = "match")]
    pub match_score: i32,
    pub mismatch: i32,
    pub gap_open: i32,
    pub gap_extend: i32,
    pub band_width: usize,
    pub min_report_score: i32,
}

impl Default for ScoringScheme {
    fn default() -> Self {
        Self {
            match_score: 1,
            mismatch: -4,
            gap_open: -6,
            gap_extend: -1,
            band_width: 15,
            min_report_score: 30,
        }
    }
}

impl ScoringScheme {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.match_score <= 0 {
            return Err(AlignError::InvalidScoring("match score must be positive".into()));
        }
        if self.mismatch > 0 || self.gap_open > 0 || self.gap_extend > 0 {
            return Err(AlignError::InvalidScoring("penalties must be zero or negative".into()));
        }
        if self.band_width == 0 {
            return Err(AlignError::InvalidScoring("band width must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn substitution(&self, a: u8, b: u8) -> i32 {
        if a == b && a != b'N' {
            self.match_score
        } else {
            self.mismatch
        }
    }

    pub fn gap(&self, len: usize) -> i32 {
        if len == 0 {
            0
        } else {
            self.gap_open + self.gap_extend * len as i32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentRecord {
    pub read_id: String,
    pub mate: Option<Mate>,
    pub partition_id: u32,
    /// 0-based within the segment.
    pub segment_pos: u64,
    /// 1-based reference coordinate; 0 when unmapped.
    pub global_pos: u64,
    pub score: i32,
    pub cigar: String,
    pub mapped: bool,
}

impl AlignmentRecord {
    pub fn unmapped(read: &ReadRecord, partition_id: u32) -> Self {
        Self {
            read_id: read.id.clone(),
            mate: read.mate,
            partition_id,
            segment_pos: 0,
            global_pos: 0,
            score: UNMAPPED_SCORE,
            cigar: "*".into(),
            mapped: false,
        }
    }

    pub fn key(&self) -> ReadKey {
        ReadKey {
            id: self.read_id.clone(),
            mate: self.mate,
        }
    }
}

/// One alignment of a read within a segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub pos: usize,
    pub score: i32,
    pub cigar: Vec<(CigarOp, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CigarOp {
    Match,
    Ins,
    Del,
}

impl CigarOp {
    pub fn symbol(self) -> char {
        match self {
            CigarOp::Match => 'M',
            CigarOp::Ins => 'I',
            CigarOp::Del => 'D',
        }
    }
}

pub fn cigar_string(ops: &[(CigarOp, usize)]) -> String {
    if ops.is_empty() {
        return "*".into();
    }
    ops.iter().map(|(op, n)| format!("{n}{}", op.symbol())).collect()
}

pub fn parse_cigar(s: &str) -> Option<Vec<(CigarOp, usize)>> {
    let mut out = Vec::new();
    let mut n = 0usize;
    let mut saw_digit = false;
    for c in s.chars() {
        if let Some(d) = c.to_digit(10) {
            n = n.checked_mul(10)?.checked_add(d as usize)?;
            saw_digit = true;
            continue;
        }
        if !saw_digit {
            return None;
        }
        let op = match c {
            'M' | '=' | 'X' => CigarOp::Match,
            'I' => CigarOp::Ins,
            'D' => CigarOp::Del,
            _ => return None,
        };
        out.push((op, n));
        n = 0;
        saw_digit = false;
    }
    if saw_digit {
        return None;
    }
    Some(out)
}

/// Scores an alignment given by `(pos, cigar)` against `reference`.
/// `None` if the CIGAR does not fit.
pub fn rescore(
    reference: &[u8],
    read: &[u8],
    pos: usize,
    cigar: &[(CigarOp, usize)],
    scoring: &ScoringScheme,
) -> Option<i32> {
    let (mut i, mut j) = (0usize, pos);
    let mut score = 0i32;
    for &(op, n) in cigar {
        match op {
            CigarOp::Match => {
                if i + n > read.len() || j + n > reference.len() {
                    return None;
                }
                for k in 0..n {
                    score += scoring.substitution(read[i + k], reference[j + k]);
                }
                i += n;
                j += n;
            }
            CigarOp::Ins => {
                i += n;
                score += scoring.gap(n);
            }
            CigarOp::Del => {
                j += n;
                score += scoring.gap(n);
            }
        }
    }
    (i == read.len() && j <= reference.len()).then_some(score)
}

/// Distinct seed diagonals of `read` against the index, ascending.
pub fn seed_diagonals(index: &KmerIndex, read: &[u8]) -> Vec<i64> {
    let mut diags = Vec::new();
    for_each_kmer(read, index.seed_length, |q, code| {
        for &pos in index.lookup_code(code) {
            diags.push(i64::from(pos) - q as i64);
        }
    });
    diags.sort_unstable();
    diags.dedup();
    diags
}

fn cluster_diagonals(diags: &[i64], gap: i64) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    for &d in diags {
        match out.last_mut() {
            Some((_, hi)) if d - *hi <= gap => *hi = d,
            _ => out.push((d, d)),
        }
    }
    out
}

/// Banded end-to-end (read) / local (reference) alignment restricted to
/// diagonals `j - i` in `[dlo, dhi]`. Among equal best scores the lowest
/// start wins.
pub fn banded_align(reference: &[u8], read: &[u8], dlo: i64, dhi: i64, scoring: &ScoringScheme) -> Option<Hit> {
    let rows = read.len() + 1;
    let l = reference.len() as i64;
    if read.is_empty() || dhi < dlo || dhi < -(read.len() as i64) || dlo > l {
        return None;
    }
    let width = (dhi - dlo + 1) as usize;
    let go_ge = scoring.gap_open + scoring.gap_extend;
    let ge = scoring.gap_extend;
    let mut h = vec![NEG; rows * width];
    let mut e = vec![NEG; rows * width];
    let mut f = vec![NEG; rows * width];
    let at = |i: usize, t: usize| i * width + t;
    // valid t for row i: 0 <= j <= l with j = i + t + dlo
    let t_range = |i: usize| -> Option<(usize, usize)> {
        let lo = (-(i as i64) - dlo).max(0);
        let hi = (l - i as i64 - dlo).min(width as i64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };

    if let Some((lo, hi)) = t_range(0) {
        for t in lo..=hi {
            h[at(0, t)] = 0;
        }
    }
    for i in 1..rows {
        let Some((lo, hi)) = t_range(i) else { continue };
        let rb = read[i - 1];
        for t in lo..=hi {
            let j = (i as i64 + t as i64 + dlo) as usize;
            let mut best = NEG;
            if j >= 1 {
                let prev = h[at(i - 1, t)];
                if prev > NEG {
                    best = prev + scoring.substitution(rb, reference[j - 1]);
                }
            }
            if t > lo {
                let ev = (h[at(i, t - 1)] + go_ge).max(e[at(i, t - 1)] + ge);
                e[at(i, t)] = ev.max(NEG);
            }
            if t + 1 < width {
                let fv = (h[at(i - 1, t + 1)] + go_ge).max(f[at(i - 1, t + 1)] + ge);
                f[at(i, t)] = fv.max(NEG);
            }
            best = best.max(e[at(i, t)]).max(f[at(i, t)]);
            h[at(i, t)] = best;
        }
    }

    let last = rows - 1;
    let (lo, hi) = t_range(last)?;
    let best = (lo..=hi).map(|t| h[at(last, t)]).max()?;
    if best <= NEG / 2 {
        return None;
    }
    let mut chosen: Option<Hit> = None;
    for t_end in (lo..=hi).filter(|&t| h[at(last, t)] == best) {
        let hit = traceback(reference, read, &h, &e, &f, width, dlo, last, t_end, scoring);
        if chosen.as_ref().map_or(true, |c| hit.pos < c.pos) {
            chosen = Some(hit);
        }
    }
    chosen
}

#[allow(clippy::too_many_arguments)]
fn traceback(
    reference: &[u8],
    read: &[u8],
    h: &[i32],
    e: &[i32],
    f: &[i32],
    width: usize,
    dlo: i64,
    mut i: usize,
    mut t: usize,
    scoring: &ScoringScheme,
) -> Hit {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        H,
        E,
        F,
    }
    let at = |i: usize, t: usize| i * width + t;
    let go_ge = scoring.gap_open + scoring.gap_extend;
    let score = h[at(i, t)];
    let mut state = State::H;
    let mut ops: Vec<CigarOp> = Vec::with_capacity(read.len() + 8);
    while i > 0 {
        let j = (i as i64 + t as i64 + dlo) as usize;
        match state {
            State::H => {
                let cur = h[at(i, t)];
                let diag_ok = j >= 1
                    && h[at(i - 1, t)] > NEG
                    && h[at(i - 1, t)] + scoring.substitution(read[i - 1], reference[j - 1]) == cur;
                if diag_ok {
                    ops.push(CigarOp::Match);
                    i -= 1;
                } else if cur == e[at(i, t)] {
                    state = State::E;
                } else {
                    debug_assert_eq!(cur, f[at(i, t)]);
                    state = State::F;
                }
            }
            State::E => {
                ops.push(CigarOp::Del);
                let opened = h[at(i, t - 1)] + go_ge == e[at(i, t)];
                t -= 1;
                if opened {
                    state = State::H;
                }
            }
            State::F => {
                ops.push(CigarOp::Ins);
                let opened = h[at(i - 1, t + 1)] + go_ge == f[at(i, t)];
                i -= 1;
                t += 1;
                if opened {
                    state = State::H;
                }
            }
        }
    }
    let pos = (t as i64 + dlo) as usize;
    ops.reverse();
    let mut cigar: Vec<(CigarOp, usize)> = Vec::new();
    for op in ops {
        match cigar.last_mut() {
            Some((last, n)) if *last == op => *n += 1,
            _ => cigar.push((op, 1)),
        }
    }
    Hit { pos, score, cigar }
}

/// Best alignment of one read in a segment, or `None` if no candidate reaches
/// `min_report_score`.
pub fn align_read(index: &KmerIndex, segment: &[u8], read: &[u8], scoring: &ScoringScheme) -> Option<Hit> {
    let diags = seed_diagonals(index, read);
    let w = scoring.band_width as i64;
    let mut best: Option<Hit> = None;
    for (lo, hi) in cluster_diagonals(&diags, w) {
        let Some(hit) = banded_align(segment, read, lo - w, hi + w, scoring) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => hit.score > b.score || (hit.score == b.score && hit.pos < b.pos),
        };
        if better {
            best = Some(hit);
        }
    }
    best.filter(|h| h.score >= scoring.min_report_score)
}

/// Aligns every read against one segment; output follows input order with
/// one record per read.
pub fn align_reads(
    index: &KmerIndex,
    segment: &ReferenceSegment,
    reads: &[ReadRecord],
    scoring: &ScoringScheme,
) -> Result<Vec<AlignmentRecord>, AlignError> {
    scoring.validate()?;
    if !index.matches(segment) {
        return Err(AlignError::IndexSegmentMismatch {
            index_partition: index.partition_id,
            segment_partition: segment.partition_id,
        });
    }
    Ok(reads
        .iter()
        .map(|r| match align_read(index, &segment.sequence, &r.seq, scoring) {
            Some(hit) => AlignmentRecord {
                read_id: r.id.clone(),
                mate: r.mate,
                partition_id: segment.partition_id,
                segment_pos: hit.pos as u64,
                global_pos: hit.pos as u64 + segment.global_offset + 1,
                score: hit.score,
                cigar: cigar_string(&hit.cigar),
                mapped: true,
            },
            None => AlignmentRecord::unmapped(r, segment.partition_id),
        })
        .collect())
}

/// Serializes per-partition alignments as SAM in segment coordinates.
pub fn records_to_sam(
    records: &[AlignmentRecord],
    reads: &[ReadRecord],
    segment: &SegmentSpan,
    segment_name: &str,
) -> Vec<seqio::SamRecord> {
    records
        .iter()
        .zip(reads)
        .map(|(a, r)| {
            let flag = seqio::mate_flags(a.mate);
            if a.mapped {
                seqio::SamRecord {
                    qname: a.read_id.clone(),
                    flag,
                    rname: segment_name.to_string(),
                    pos: a.segment_pos + 1,
                    mapq: seqio::MAPQ_UNAVAILABLE,
                    cigar: a.cigar.clone(),
                    seq: r.seq.clone(),
                    qual: r.qual.clone(),
                    score: Some(a.score),
                }
            } else {
                debug_assert_eq!(segment.partition_id, a.partition_id);
                seqio::SamRecord::unmapped(a.read_id.clone(), flag, r.seq.clone(), r.qual.clone())
            }
        })
        .collect()
}

/// Reads per-partition SAM back into alignment records. `rname` must name the
/// segment (or be `*`); secondary and supplementary lines are skipped.
pub fn sam_to_records(
    sam: &[seqio::SamRecord],
    segment: &SegmentSpan,
    segment_name: &str,
) -> Result<Vec<AlignmentRecord>, AlignError> {
    let mut out = Vec::with_capacity(sam.len());
    for rec in sam {
        if rec.flag & (0x100 | 0x800) != 0 {
            continue;
        }
        let mate = if rec.flag & flags::FIRST_IN_PAIR != 0 {
            Some(Mate::First)
        } else if rec.flag & flags::SECOND_IN_PAIR != 0 {
            Some(Mate::Second)
        } else {
            None
        };
        if rec.is_unmapped() || rec.rname == "*" || rec.pos == 0 {
            out.push(AlignmentRecord {
                read_id: rec.qname.clone(),
                mate,
                partition_id: segment.partition_id,
                segment_pos: 0,
                global_pos: 0,
                score: UNMAPPED_SCORE,
                cigar: "*".into(),
                mapped: false,
            });
            continue;
        }
        if rec.rname != segment_name {
            return Err(AlignError::Seq(SeqError::MalformedSam {
                line: 0,
                reason: format!("record {} names {:?}, expected {segment_name:?}", rec.qname, rec.rname),
            }));
        }
        let segment_pos = rec.pos - 1;
        out.push(AlignmentRecord {
            read_id: rec.qname.clone(),
            mate,
            partition_id: segment.partition_id,
            segment_pos,
            global_pos: segment_pos + segment.global_offset + 1,
            score: rec.score.unwrap_or(0),
            cigar: rec.cigar.clone(),
            mapped: true,
        });
    }
    Ok(out)
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs an external aligner through `sh -c`. `{ref}` and `{reads}` in the
/// template are replaced by the quoted paths; the tool must print SAM on
/// stdout with `rname` equal to the segment name.
pub fn align_external(
    command_template: &str,
    segment_file: &Path,
    reads_file: &Path,
    segment: &SegmentSpan,
    segment_name: &str,
) -> Result<Vec<AlignmentRecord>, AlignError> {
    let cmd = command_template
        .replace("{ref}", &shell_quote(segment_file))
        .replace("{reads}", &shell_quote(reads_file));
    let output = Command::new("sh").arg("-c").arg(&cmd).output()?;
    if !output.status.success() {
        return Err(AlignError::ExternalToolFailure {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let sam = seqio::parse_sam(&output.stdout).map_err(|e| AlignError::ExternalToolFailure {
        status: "unparseable output".into(),
        stderr: e.to_string(),
    })?;
    sam_to_records(&sam.records, segment, segment_name)
}
