//! FASTA reference, FASTQ reads, and the SAM subset the pipeline emits.
//!
//! Sequences are normalized to upper case over `{A, C, G, T, N}`; anything
//! else is rejected. Quality strings are carried through verbatim.

use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("malformed FASTA: {0}")]
    MalformedFasta(String),
    #[error("malformed FASTQ record {record}: {reason}")]
    MalformedFastq { record: usize, reason: String },
    #[error("malformed SAM line {line}: {reason}")]
    MalformedSam { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Upper-cases `b` and returns it if it is a legal base.
#[inline]
pub fn normalize_base(b: u8) -> Option<u8> {
    match b.to_ascii_uppercase() {
        c @ (b'A' | b'C' | b'G' | b'T' | b'N') => Some(c),
        _ => None,
    }
}

fn normalize_into(line: &[u8], out: &mut Vec<u8>) -> Result<(), u8> {
    out.reserve(line.len());
    for &b in line {
        out.push(normalize_base(b).ok_or(b)?);
    }
    Ok(())
}

fn trim_eol(mut line: &[u8]) -> &[u8] {
    while let Some((&last, rest)) = line.split_last() {
        if last == b'\n' || last == b'\r' {
            line = rest;
        } else {
            break;
        }
    }
    line
}

#[derive(Clone, PartialEq, Eq)]
pub struct ReferenceGenome {
    pub name: String,
    pub sequence: Vec<u8>,
}

impl ReferenceGenome {
    pub fn new(name: impl Into<String>, sequence: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            sequence,
        }
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

impl fmt::Debug for ReferenceGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceGenome")
            .field("name", &self.name)
            .field("length", &self.sequence.len())
            .finish()
    }
}

/// Parses a single-record FASTA file.
///
/// The header name is the first whitespace-delimited token after `>`.
/// A second record is an error: partition offsets are only meaningful for a
/// single contiguous sequence.
pub fn parse_fasta<R: BufRead>(mut reader: R) -> Result<ReferenceGenome, SeqError> {
    let mut line = Vec::new();
    let mut name: Option<String> = None;
    let mut sequence = Vec::new();
    let mut line_no = 0usize;
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        line_no += 1;
        let content = trim_eol(&line);
        if let Some(header) = content.strip_prefix(b">") {
            if name.is_some() {
                return Err(SeqError::MalformedFasta(format!(
                    "multiple records (second header at line {line_no}); only single-sequence references are supported"
                )));
            }
            let header = String::from_utf8_lossy(header);
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(SeqError::MalformedFasta(format!("empty header name at line {line_no}")));
            }
            name = Some(id);
            continue;
        }
        if name.is_none() {
            if content.is_empty() {
                continue;
            }
            return Err(SeqError::MalformedFasta("input does not begin with a '>' header".into()));
        }
        normalize_into(content, &mut sequence).map_err(|b| {
            SeqError::MalformedFasta(format!(
                "illegal character {:?} at line {line_no}",
                char::from(b)
            ))
        })?;
    }
    let name = name.ok_or_else(|| SeqError::MalformedFasta("no header line".into()))?;
    if sequence.is_empty() {
        return Err(SeqError::MalformedFasta(format!("record {name:?} has an empty sequence")));
    }
    Ok(ReferenceGenome { name, sequence })
}

pub fn write_fasta<W: Write>(mut w: W, name: &str, sequence: &[u8]) -> io::Result<()> {
    writeln!(w, ">{name}")?;
    for line in sequence.chunks(80) {
        w.write_all(line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mate {
    First,
    Second,
}

impl Mate {
    pub fn suffix(self) -> &'static str {
        match self {
            Mate::First => "/1",
            Mate::Second => "/2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRecord {
    pub id: String,
    pub seq: Vec<u8>,
    pub qual: Vec<u8>,
    pub mate: Option<Mate>,
}

impl ReadRecord {
    pub fn new(id: impl Into<String>, seq: Vec<u8>, qual: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            seq,
            qual,
            mate: None,
        }
    }

    pub fn with_mate(mut self, mate: Mate) -> Self {
        self.mate = Some(mate);
        self
    }

    /// Identity of the read within a run: mates share an id.
    pub fn key(&self) -> ReadKey {
        ReadKey {
            id: self.id.clone(),
            mate: self.mate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReadKey {
    pub id: String,
    pub mate: Option<Mate>,
}

/// Streaming FASTQ parser yielding records in file order.
pub struct FastqReader<R> {
    reader: R,
    record: usize,
    mate_suffixes: bool,
    buf: Vec<u8>,
}

impl<R: BufRead> FastqReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            record: 0,
            mate_suffixes: false,
            buf: Vec::new(),
        }
    }

    /// Interpret trailing `/1` and `/2` on read names as mate tags.
    pub fn with_mate_suffixes(mut self, on: bool) -> Self {
        self.mate_suffixes = on;
        self
    }

    fn err(&self, reason: impl Into<String>) -> SeqError {
        SeqError::MalformedFastq {
            record: self.record,
            reason: reason.into(),
        }
    }

    fn next_line(&mut self) -> Result<Option<Vec<u8>>, SeqError> {
        self.buf.clear();
        if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
            return Ok(None);
        }
        Ok(Some(trim_eol(&self.buf).to_vec()))
    }

    fn read_record(&mut self) -> Result<Option<ReadRecord>, SeqError> {
        let header = loop {
            match self.next_line()? {
                None => return Ok(None),
                // blank lines between records are tolerated, nothing else is
                Some(l) if l.is_empty() => continue,
                Some(l) => break l,
            }
        };
        self.record += 1;
        let header = header
            .strip_prefix(b"@")
            .ok_or_else(|| self.err("header line does not start with '@'"))?;
        let header = String::from_utf8_lossy(header);
        let mut id = header.split_whitespace().next().unwrap_or("").to_string();
        if id.is_empty() {
            return Err(self.err("empty read id"));
        }
        let seq_line = self.next_line()?.ok_or_else(|| self.err("truncated record (missing sequence)"))?;
        let plus = self.next_line()?.ok_or_else(|| self.err("truncated record (missing '+' line)"))?;
        if !plus.starts_with(b"+") {
            return Err(self.err("third line does not start with '+'"));
        }
        let qual = self.next_line()?.ok_or_else(|| self.err("truncated record (missing quality)"))?;
        let mut seq = Vec::with_capacity(seq_line.len());
        if let Err(b) = normalize_into(&seq_line, &mut seq) {
            return Err(self.err(format!("illegal base {:?}", char::from(b))));
        }
        if qual.len() != seq.len() {
            return Err(self.err(format!(
                "quality length {} does not match sequence length {}",
                qual.len(),
                seq.len()
            )));
        }
        let mut mate = None;
        if self.mate_suffixes {
            for m in [Mate::First, Mate::Second] {
                if let Some(stripped) = id.strip_suffix(m.suffix()) {
                    if !stripped.is_empty() {
                        mate = Some(m);
                        id = stripped.to_string();
                    }
                    break;
                }
            }
        }
        Ok(Some(ReadRecord { id, seq, qual, mate }))
    }
}

impl<R: BufRead> Iterator for FastqReader<R> {
    type Item = Result<ReadRecord, SeqError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_record().transpose()
    }
}

pub fn parse_fastq<R: BufRead>(reader: R) -> FastqReader<R> {
    FastqReader::new(reader)
}

/// Collects a whole FASTQ stream, failing on the first malformed record.
pub fn read_fastq<R: BufRead>(reader: R) -> Result<Vec<ReadRecord>, SeqError> {
    parse_fastq(reader).collect()
}

/// Writes records as 4-line FASTQ. Mates get a `/1` or `/2` suffix.
pub fn write_fastq<'a, W, I>(mut w: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ReadRecord>,
{
    for r in records {
        w.write_all(b"@")?;
        w.write_all(r.id.as_bytes())?;
        if let Some(m) = r.mate {
            w.write_all(m.suffix().as_bytes())?;
        }
        w.write_all(b"\n")?;
        w.write_all(&r.seq)?;
        w.write_all(b"\n+\n")?;
        w.write_all(&r.qual)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub mod flags {
    pub const PAIRED: u16 = 0x1;
    pub const UNMAPPED: u16 = 0x4;
    pub const MATE_UNMAPPED: u16 = 0x8;
    pub const FIRST_IN_PAIR: u16 = 0x40;
    pub const SECOND_IN_PAIR: u16 = 0x80;
}

/// Pairing bits for a record of the given mate.
pub fn mate_flags(mate: Option<Mate>) -> u16 {
    match mate {
        None => 0,
        Some(Mate::First) => flags::PAIRED | flags::FIRST_IN_PAIR,
        Some(Mate::Second) => flags::PAIRED | flags::SECOND_IN_PAIR,
    }
}

/// MAPQ written for mapped records: 255 means "not available".
pub const MAPQ_UNAVAILABLE: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamRecord {
    pub qname: String,
    pub flag: u16,
    pub rname: String,
    /// 1-based; 0 when unmapped.
    pub pos: u64,
    pub mapq: u8,
    pub cigar: String,
    pub seq: Vec<u8>,
    pub qual: Vec<u8>,
    pub score: Option<i32>,
}

impl SamRecord {
    pub fn unmapped(qname: impl Into<String>, flag: u16, seq: Vec<u8>, qual: Vec<u8>) -> Self {
        Self {
            qname: qname.into(),
            flag: flag | flags::UNMAPPED,
            rname: "*".into(),
            pos: 0,
            mapq: 0,
            cigar: "*".into(),
            seq,
            qual,
            score: None,
        }
    }

    pub fn is_unmapped(&self) -> bool {
        self.flag & flags::UNMAPPED != 0
    }

    fn write_line<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let seq: &[u8] = if self.seq.is_empty() { b"*" } else { &self.seq };
        let qual: &[u8] = if self.qual.is_empty() { b"*" } else { &self.qual };
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t*\t0\t0\t",
            self.qname, self.flag, self.rname, self.pos, self.mapq, self.cigar
        )?;
        w.write_all(seq)?;
        w.write_all(b"\t")?;
        w.write_all(qual)?;
        if let Some(s) = self.score {
            write!(w, "\tAS:i:{s}")?;
        }
        w.write_all(b"\n")
    }
}

pub fn write_sam<W: Write>(
    mut w: W,
    records: &[SamRecord],
    header_segments: &[(String, u64)],
) -> io::Result<()> {
    w.write_all(b"@HD\tVN:1.6\tSO:unsorted\n")?;
    for (name, len) in header_segments {
        writeln!(w, "@SQ\tSN:{name}\tLN:{len}")?;
    }
    for r in records {
        r.write_line(&mut w)?;
    }
    Ok(())
}

pub fn sam_bytes(records: &[SamRecord], header_segments: &[(String, u64)]) -> Vec<u8> {
    let mut out = Vec::new();
    write_sam(&mut out, records, header_segments).expect("writing to a Vec cannot fail");
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamFile {
    pub segments: Vec<(String, u64)>,
    pub records: Vec<SamRecord>,
}

/// Parses the SAM subset: header `@SQ` lines and the 11 mandatory columns.
/// An `AS:i:` tag, if present, becomes [`SamRecord::score`]; other tags are ignored.
pub fn parse_sam(bytes: &[u8]) -> Result<SamFile, SeqError> {
    let mut out = SamFile::default();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = idx + 1;
        let line = trim_eol(raw);
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| SeqError::MalformedSam {
            line: line_no,
            reason: reason.to_string(),
        };
        let text = std::str::from_utf8(line).map_err(|_| bad("not valid UTF-8"))?;
        if let Some(rest) = text.strip_prefix('@') {
            if rest.starts_with("SQ\t") {
                let mut name = None;
                let mut len = None;
                for field in rest.split('\t').skip(1) {
                    if let Some(v) = field.strip_prefix("SN:") {
                        name = Some(v.to_string());
                    } else if let Some(v) = field.strip_prefix("LN:") {
                        len = Some(v.parse::<u64>().map_err(|_| bad("bad LN value"))?);
                    }
                }
                match (name, len) {
                    (Some(n), Some(l)) => out.segments.push((n, l)),
                    _ => return Err(bad("@SQ line without SN and LN")),
                }
            }
            continue;
        }
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() < 11 {
            return Err(bad("fewer than 11 columns"));
        }
        let flag = cols[1].parse::<u16>().map_err(|_| bad("bad FLAG"))?;
        let pos = cols[3].parse::<u64>().map_err(|_| bad("bad POS"))?;
        let mapq = cols[4].parse::<u8>().map_err(|_| bad("bad MAPQ"))?;
        let field_bytes = |s: &str| if s == "*" { Vec::new() } else { s.as_bytes().to_vec() };
        let mut score = None;
        for tag in &cols[11..] {
            if let Some(v) = tag.strip_prefix("AS:i:") {
                score = Some(v.parse::<i32>().map_err(|_| bad("bad AS tag"))?);
            }
        }
        out.records.push(SamRecord {
            qname: cols[0].to_string(),
            flag,
            rname: cols[2].to_string(),
            pos,
            mapq,
            cigar: cols[5].to_string(),
            seq: field_bytes(cols[9]),
            qual: field_bytes(cols[10]),
            score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fasta_single_record() {
        let g = parse_fasta(&b">r\nACGT\n"[..]).unwrap();
        assert_eq!(g.name, "r");
        assert_eq!(g.sequence, b"ACGT");
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn fasta_folds_case_and_joins_lines() {
        let g = parse_fasta(&b">r\nac\ngt\n"[..]).unwrap();
        assert_eq!(g.sequence, b"ACGT");
    }

    #[test]
    fn fasta_rejects_bad_input() {
        assert!(matches!(parse_fasta(&b">r\nACXT\n"[..]), Err(SeqError::MalformedFasta(_))));
        assert!(matches!(parse_fasta(&b"ACGT\n"[..]), Err(SeqError::MalformedFasta(_))));
        assert!(matches!(parse_fasta(&b">r\n\n"[..]), Err(SeqError::MalformedFasta(_))));
        assert!(matches!(parse_fasta(&b""[..]), Err(SeqError::MalformedFasta(_))));
        assert!(matches!(
            parse_fasta(&b">a\nAC\n>b\nGT\n"[..]),
            Err(SeqError::MalformedFasta(_))
        ));
    }

    #[test]
    fn fasta_header_takes_first_token() {
        let g = parse_fasta(&b">chr1 some description\r\nNNAC\r\n"[..]).unwrap();
        assert_eq!(g.name, "chr1");
        assert_eq!(g.sequence, b"NNAC");
    }

    #[test]
    fn fastq_basic() {
        let recs = read_fastq(&b"@a\nACGT\n+\nIIII\n"[..]).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[0].seq, b"ACGT");
        assert_eq!(recs[0].qual, b"IIII");
        assert!(read_fastq(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn fastq_errors() {
        assert!(matches!(
            read_fastq(&b"@a\nACGT\n+\nIII\n"[..]),
            Err(SeqError::MalformedFastq { record: 1, .. })
        ));
        assert!(matches!(read_fastq(&b"@a\nACGT\n+\n"[..]), Err(SeqError::MalformedFastq { .. })));
        assert!(matches!(read_fastq(&b"a\nACGT\n+\nIIII\n"[..]), Err(SeqError::MalformedFastq { .. })));
        assert!(matches!(read_fastq(&b"@a\nACZT\n+\nIIII\n"[..]), Err(SeqError::MalformedFastq { .. })));
    }

    #[test]
    fn fastq_mate_suffixes() {
        let input = b"@p/1\nAC\n+\nII\n@p/2\nGT\n+\nII\n";
        let recs: Vec<_> = parse_fastq(&input[..])
            .with_mate_suffixes(true)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(recs[0].id, "p");
        assert_eq!(recs[0].mate, Some(Mate::First));
        assert_eq!(recs[1].mate, Some(Mate::Second));
        let plain = read_fastq(&input[..]).unwrap();
        assert_eq!(plain[0].id, "p/1");
        assert_eq!(plain[0].mate, None);
    }

    #[test]
    fn sam_header_only() {
        let out = sam_bytes(&[], &[("chr1".into(), 1000)]);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("@SQ\tSN:chr1\tLN:1000"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn sam_mapped_field_placement() {
        let rec = SamRecord {
            qname: "r1".into(),
            flag: 0,
            rname: "chr1".into(),
            pos: 101,
            mapq: MAPQ_UNAVAILABLE,
            cigar: "100M".into(),
            seq: vec![b'A'; 100],
            qual: vec![b'I'; 100],
            score: Some(100),
        };
        let text = String::from_utf8(sam_bytes(&[rec], &[])).unwrap();
        let line = text.lines().last().unwrap();
        let cols: Vec<_> = line.split('\t').collect();
        assert_eq!(cols[3], "101");
        assert_eq!(cols[5], "100M");
        assert_eq!(cols[11], "AS:i:100");
        assert!(line.contains("101\t255\t100M"));
    }

    #[test]
    fn sam_unmapped_convention() {
        let rec = SamRecord::unmapped("u", 0, b"ACGT".to_vec(), b"IIII".to_vec());
        let text = String::from_utf8(sam_bytes(&[rec], &[])).unwrap();
        let cols: Vec<_> = text.lines().last().unwrap().split('\t').collect();
        assert_eq!(cols[1], "4");
        assert_eq!(cols[2], "*");
        assert_eq!(cols[3], "0");
        assert_eq!(cols[5], "*");
        assert_eq!(cols.len(), 11);
    }

    fn arb_sam_record() -> impl Strategy<Value = SamRecord> {
        (
            "[A-Za-z0-9_.:]{1,12}",
            any::<bool>(),
            1u64..1_000_000,
            "[ACGTN]{1,40}",
            -200i32..200,
        )
            .prop_map(|(qname, mapped, pos, seq, score)| {
                let qual = vec![b'I'; seq.len()];
                if mapped {
                    SamRecord {
                        qname,
                        flag: 0,
                        rname: "ref".into(),
                        pos,
                        mapq: MAPQ_UNAVAILABLE,
                        cigar: format!("{}M", seq.len()),
                        seq: seq.into_bytes(),
                        qual,
                        score: Some(score),
                    }
                } else {
                    SamRecord::unmapped(qname, 0, seq.into_bytes(), qual)
                }
            })
    }

    proptest! {
        #[test]
        fn sam_round_trip(records in prop::collection::vec(arb_sam_record(), 0..20)) {
            let segs = vec![("ref".to_string(), 1_000_000u64)];
            let bytes = sam_bytes(&records, &segs);
            let parsed = parse_sam(&bytes).unwrap();
            prop_assert_eq!(parsed.segments, segs);
            prop_assert_eq!(parsed.records, records);
        }

        #[test]
        fn fastq_count_matches_lines(reads in prop::collection::vec(("[a-z0-9]{1,8}", "[ACGTN]{0,30}"), 0..30)) {
            let recs: Vec<ReadRecord> = reads
                .iter()
                .map(|(id, s)| ReadRecord::new(id.clone(), s.clone().into_bytes(), vec![b'#'; s.len()]))
                .collect();
            let mut buf = Vec::new();
            write_fastq(&mut buf, &recs).unwrap();
            let lines = buf.iter().filter(|&&b| b == b'\n').count();
            let parsed = read_fastq(&buf[..]).unwrap();
            prop_assert_eq!(parsed.len(), lines / 4);
            prop_assert_eq!(parsed, recs);
        }
    }
}
