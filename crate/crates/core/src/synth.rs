//! Seeded synthetic genomes and reads with known origins.

use rand::Rng;

use crate::seqio::{Mate, ReadRecord, ReferenceGenome};

pub fn random_bases<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect()
}

pub fn random_genome<R: Rng>(rng: &mut R, name: &str, len: usize) -> ReferenceGenome {
    ReferenceGenome::new(name, random_bases(rng, len))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedRead {
    pub read: ReadRecord,
    /// 0-based start in the genome.
    pub origin: usize,
    /// Read offsets carrying a substitution.
    pub substitutions: Vec<usize>,
}

/// Replaces `base` with a different nucleotide.
pub fn substitute<R: Rng>(rng: &mut R, base: u8) -> u8 {
    let others: Vec<u8> = b"ACGT".iter().copied().filter(|&b| b != base).collect();
    others[rng.gen_range(0..others.len())]
}

fn distinct_offsets<R: Rng>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(count);
    while out.len() < count.min(len) {
        let o = rng.gen_range(0..len);
        if !out.contains(&o) {
            out.push(o);
        }
    }
    out.sort_unstable();
    out
}

pub fn plant_read<R: Rng>(
    rng: &mut R,
    genome: &ReferenceGenome,
    id: String,
    origin: usize,
    len: usize,
    substitutions: usize,
) -> PlantedRead {
    let mut seq = genome.sequence[origin..origin + len].to_vec();
    let subs = distinct_offsets(rng, len, substitutions);
    for &o in &subs {
        seq[o] = substitute(rng, seq[o]);
    }
    PlantedRead {
        read: ReadRecord::new(id, seq, vec![b'I'; len]),
        origin,
        substitutions: subs,
    }
}

/// `n` reads of length `len` at uniform origins, each with up to
/// `max_substitutions` substitutions.
pub fn plant_reads<R: Rng>(
    rng: &mut R,
    genome: &ReferenceGenome,
    n: usize,
    len: usize,
    max_substitutions: usize,
) -> Vec<PlantedRead> {
    assert!(len <= genome.len(), "read longer than genome");
    (0..n)
        .map(|i| {
            let origin = rng.gen_range(0..=genome.len() - len);
            let subs = rng.gen_range(0..=max_substitutions);
            plant_read(rng, genome, format!("read{i:06}"), origin, len, subs)
        })
        .collect()
}

/// Forward-strand mate pairs: mate 2 starts `insert - len` bases after mate 1.
pub fn plant_pairs<R: Rng>(
    rng: &mut R,
    genome: &ReferenceGenome,
    n: usize,
    len: usize,
    insert: usize,
) -> Vec<(ReadRecord, ReadRecord)> {
    assert!(insert >= len && insert <= genome.len());
    (0..n)
        .map(|i| {
            let origin = rng.gen_range(0..=genome.len() - insert);
            let id = format!("pair{i:06}");
            let a = plant_read(rng, genome, id.clone(), origin, len, 0).read.with_mate(Mate::First);
            let b = plant_read(rng, genome, id, origin + insert - len, len, 0)
                .read
                .with_mate(Mate::Second);
            (a, b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planted_reads_match_origin_except_substitutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_genome(&mut rng, "g", 5000);
        for p in plant_reads(&mut rng, &g, 200, 100, 2) {
            let truth = &g.sequence[p.origin..p.origin + 100];
            let diff: Vec<usize> = (0..100).filter(|&i| truth[i] != p.read.seq[i]).collect();
            assert_eq!(diff, p.substitutions);
            assert!(diff.len() <= 2);
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let a = random_genome(&mut ChaCha8Rng::seed_from_u64(5), "g", 1000);
        let b = random_genome(&mut ChaCha8Rng::seed_from_u64(5), "g", 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn pairs_share_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_genome(&mut rng, "g", 3000);
        for (a, b) in plant_pairs(&mut rng, &g, 20, 100, 400) {
            assert_eq!(a.id, b.id);
            assert_eq!((a.mate, b.mate), (Some(Mate::First), Some(Mate::Second)));
        }
    }
}
