//! Shared fixtures for the criterion benches.

use hysec_core::refprep::{self, DispatchParams, FilterSpec, ReferenceSegment};
use hysec_core::seqio::{ReadRecord, ReferenceGenome};
use hysec_core::{synth, BloomFilter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Workload {
    pub genome: ReferenceGenome,
    pub segments: Vec<ReferenceSegment>,
    pub reads: Vec<ReadRecord>,
    pub spec: FilterSpec,
    pub filters: Vec<BloomFilter>,
}

/// Seeded genome of `genome_len` bases in `p` partitions, with `n_reads`
/// planted 150-base reads carrying up to two substitutions each.
pub fn workload(genome_len: usize, p: usize, n_reads: usize) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let genome = synth::random_genome(&mut rng, "bench", genome_len);
    let reads = synth::plant_reads(&mut rng, &genome, n_reads, 150, 2)
        .into_iter()
        .map(|r| r.read)
        .collect();
    let segments = refprep::partition_reference(&genome, p, 149).expect("valid layout");
    let params = DispatchParams::new(25, 15, p).expect("valid b-mer params");
    let m = refprep::default_bloom_bits(&segments, &params, 12.0);
    let spec = FilterSpec::new(refprep::layout_id(&genome, p, 149), params, m, 3, 0);
    let filters = refprep::generate_bloom_filters(&segments, &spec).expect("filters build");
    Workload {
        genome,
        segments,
        reads,
        spec,
        filters,
    }
}
