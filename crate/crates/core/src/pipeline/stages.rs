use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{Cause, PipelineError, WorkDir};
use crate::align::{self, AlignmentRecord};
use crate::bloom::BloomFilter;
use crate::config::Config;
use crate::dispatch;
use crate::merge;
use crate::refprep::{self, FilterSpec, KmerIndex, ReferenceSegment, SegmentSpan, INDEX_MAGIC};
use crate::scheduler::{
    build_task_graph, execute, CacheState, ExecError, ExecOptions, RunReport, Task, TaskGraph, TaskKind,
};
use crate::sealvault::{self, measure, KeyPolicy, RootSecret, Vault};
use crate::seqio::{self, Mate, ReadRecord, ReferenceGenome};

/// Identity under which intermediate files are sealed: every pipeline stage
/// is built by the same signer, so all of them derive the same key.
pub const PIPELINE_SIGNER: &str = "hysec-pipeline";
pub const PIPELINE_SIGNER_VERSION: u32 = 1;

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err<'p>(stage: &'static str, path: &'p Path) -> impl FnOnce(std::io::Error) -> PipelineError + 'p {
    move |e| PipelineError::new(stage, e).path(path)
}

fn read_file(stage: &'static str, path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(stage, path))
}

fn write_file(stage: &'static str, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(stage, dir))?;
    }
    fs::write(path, bytes).map_err(io_err(stage, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSegment {
    #[serde(flatten)]
    pub span: SegmentSpan,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub reference_name: String,
    pub reference_length: u64,
    pub partitions: usize,
    pub overlap: usize,
    pub layout_id: String,
    pub segments: Vec<ManifestSegment>,
}

impl Manifest {
    pub fn spans(&self) -> Vec<SegmentSpan> {
        self.segments.iter().map(|s| s.span).collect()
    }
}

pub fn load_manifest(work: &WorkDir) -> Result<Manifest> {
    let path = work.manifest();
    let bytes = read_file("partition", &path)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::new("partition", e).path(&path))
}

/// Everything the stage runners share.
struct Context<'a> {
    cfg: &'a Config,
    work: WorkDir,
    genome: &'a ReferenceGenome,
    layout: [u8; 32],
    spec: FilterSpec,
    /// In-memory partitioning, used for sizing and cache checks only; stages
    /// read their inputs from the work directory.
    segments: Vec<ReferenceSegment>,
    keys: Option<(RootSecret, RootSecret)>,
    paired: bool,
    reads_seen: AtomicUsize,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a Config, genome: &'a ReferenceGenome) -> Result<Self> {
        cfg.validate().map_err(|e| PipelineError::new("config", e))?;
        let p = cfg.partitions;
        let segments = refprep::partition_reference(genome, p, cfg.overlap)
            .map_err(|e| PipelineError::new("partition", e))?;
        let params = cfg.dispatch_params().map_err(|e| PipelineError::new("config", e))?;
        let layout = refprep::layout_id(genome, p, cfg.overlap);
        let m = if cfg.bloom.bits > 0 {
            cfg.bloom.bits
        } else {
            refprep::default_bloom_bits(&segments, &params, cfg.bloom.bits_per_element)
        };
        let spec = FilterSpec::new(layout, params, m, cfg.bloom.hashes, cfg.bloom.seed);
        Ok(Self {
            cfg,
            work: WorkDir::new(&cfg.workdir),
            genome,
            layout,
            spec,
            segments,
            keys: None,
            paired: false,
            reads_seen: AtomicUsize::new(0),
        })
    }

    fn p(&self) -> u32 {
        self.cfg.partitions as u32
    }

    fn root(&self) -> &RootSecret {
        &self.keys.as_ref().expect("keys loaded for secure stages").0
    }

    fn user(&self) -> &RootSecret {
        &self.keys.as_ref().expect("keys loaded for secure stages").1
    }

    fn vault(&self) -> Vault {
        Vault::new(self.root().clone())
    }

    fn policy(&self) -> KeyPolicy {
        KeyPolicy::signer(measure(PIPELINE_SIGNER), PIPELINE_SIGNER_VERSION)
    }

    fn load_segment(&self, stage: &'static str, i: u32) -> Result<ReferenceSegment> {
        let manifest = load_manifest(&self.work).map_err(|e| PipelineError { stage, ..e })?;
        let entry = manifest
            .segments
            .get(i as usize)
            .filter(|s| s.span.partition_id == i)
            .ok_or_else(|| {
                PipelineError::new(stage, Cause::Invalid(format!("manifest has no partition {i}")))
                    .partition(Some(i))
                    .path(&self.work.manifest())
            })?;
        let path = self.work.partition_fasta(i);
        let bytes = read_file(stage, &path)?;
        let fa = seqio::parse_fasta(&bytes[..]).map_err(|e| PipelineError::new(stage, e).partition(Some(i)).path(&path))?;
        let seg = ReferenceSegment {
            partition_id: i,
            sequence: fa.sequence,
            global_offset: entry.span.global_offset,
            core_length: entry.span.core_length,
            overlap: entry.span.overlap,
        };
        if seg.len() as u64 != entry.span.len() || seg.checksum() != entry.checksum {
            return Err(PipelineError::new(stage, Cause::Invalid("partition file does not match manifest".into()))
                .partition(Some(i))
                .path(&path));
        }
        Ok(seg)
    }

    fn load_reads(&self, stage: &'static str, partition: Option<u32>) -> Result<Vec<ReadRecord>> {
        let path = self.work.sealed_input();
        let blob = read_file(stage, &path)?;
        let plain = sealvault::user_decrypt(&blob, self.user())
            .map_err(|e| PipelineError::new(stage, e).partition(partition).path(&path))?;
        seqio::parse_fastq(&plain[..])
            .with_mate_suffixes(self.paired)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::new(stage, e).partition(partition).path(&path))
    }

    fn unseal(&self, stage: &'static str, i: u32, path: &Path) -> Result<Vec<u8>> {
        let blob = read_file(stage, path)?;
        self.vault()
            .unseal(&blob, &self.policy())
            .map_err(|e| PipelineError::new(stage, e).partition(Some(i)).path(path))
    }

    fn seal_to(&self, stage: &'static str, i: Option<u32>, path: &Path, plain: &[u8]) -> Result<()> {
        let blob = self
            .vault()
            .seal(plain, &self.policy())
            .map_err(|e| PipelineError::new(stage, e).partition(i).path(path))?;
        write_file(stage, path, blob.as_bytes())
    }

    fn run_task(&self, task: &Task) -> Result<()> {
        let i = task.partition.unwrap_or(0);
        match task.kind {
            TaskKind::Partition => self.run_partition(),
            TaskKind::Index => self.run_index(i),
            TaskKind::BloomBuild => self.run_bloom(),
            TaskKind::Dispatch => self.run_dispatch(i),
            TaskKind::Align => self.run_align(i),
            TaskKind::Merge => self.run_merge(),
        }
    }

    fn run_partition(&self) -> Result<()> {
        for dir in [self.work.partitions_dir(), self.work.index_dir()] {
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(io_err("partition", &dir))?;
            }
        }
        let mut entries = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let path = self.work.partition_fasta(seg.partition_id);
            let mut fa = Vec::with_capacity(seg.len() + seg.len() / 80 + 16);
            seqio::write_fasta(&mut fa, &seg.name(), &seg.sequence).expect("writing to a Vec cannot fail");
            write_file("partition", &path, &fa)?;
            entries.push(ManifestSegment {
                span: seg.span(),
                checksum: seg.checksum(),
            });
        }
        let manifest = Manifest {
            reference_name: self.genome.name.clone(),
            reference_length: self.genome.len() as u64,
            partitions: self.cfg.partitions,
            overlap: self.cfg.overlap,
            layout_id: hex::encode(self.layout),
            segments: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_file("partition", &self.work.manifest(), &json)
    }

    fn run_index(&self, i: u32) -> Result<()> {
        let seg = self.load_segment("index", i)?;
        let index = refprep::build_index(&seg, self.cfg.align.seed_length)
            .map_err(|e| PipelineError::new("index", e).partition(Some(i)))?;
        write_file("index", &self.work.index(i), &index.to_bytes())
    }

    fn run_bloom(&self) -> Result<()> {
        let segments = (0..self.p())
            .map(|i| self.load_segment("bloom_build", i))
            .collect::<Result<Vec<_>>>()?;
        let filters = refprep::generate_bloom_filters(&segments, &self.spec)
            .map_err(|e| PipelineError::new("bloom_build", e))?;
        let dir = self.work.bloom_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err("bloom_build", &dir))?;
        }
        for f in filters {
            let path = self.work.bloom(&self.spec.file_name(f.partition_id()));
            write_file("bloom_build", &path, &f.to_bytes())?;
        }
        Ok(())
    }

    fn run_dispatch(&self, i: u32) -> Result<()> {
        let fpath = self.work.bloom(&self.spec.file_name(i));
        let fbytes = read_file("dispatch", &fpath)?;
        let filter = BloomFilter::from_bytes(&fbytes)
            .map_err(|e| PipelineError::new("dispatch", e).partition(Some(i)).path(&fpath))?;
        let reads = self.load_reads("dispatch", Some(i))?;
        let scan = self.cfg.read_scan().map_err(|e| PipelineError::new("dispatch", e))?;
        let q = if self.paired {
            dispatch::dispatch_pairs(&filter, &reads, &self.spec, scan)
        } else {
            dispatch::dispatch(&filter, &reads, &self.spec, scan)
        }
        .map_err(|e| PipelineError::new("dispatch", e).partition(Some(i)).path(&fpath))?;
        log::debug!("partition {i}: {} of {} reads dispatched", q.reads.len(), reads.len());
        let mut fq = Vec::new();
        seqio::write_fastq(&mut fq, &q.reads).expect("writing to a Vec cannot fail");
        self.seal_to("dispatch", Some(i), &self.work.dispatched(i), &fq)
    }

    fn run_align(&self, i: u32) -> Result<()> {
        let dpath = self.work.dispatched(i);
        let plain = self.unseal("align", i, &dpath)?;
        let reads: Vec<ReadRecord> = seqio::parse_fastq(&plain[..])
            .with_mate_suffixes(self.paired)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PipelineError::new("align", e).partition(Some(i)).path(&dpath))?;
        let seg = self.load_segment("align", i)?;
        let name = seg.name();
        let records = if self.cfg.align.aligner == "external" {
            self.align_external(i, &seg, &reads)?
        } else {
            let ipath = self.work.index(i);
            let ibytes = read_file("align", &ipath)?;
            let index = KmerIndex::read_from(&ibytes[..])
                .map_err(|e| PipelineError::new("align", e).partition(Some(i)).path(&ipath))?;
            align::align_reads(&index, &seg, &reads, &self.cfg.align.scoring)
                .map_err(|e| PipelineError::new("align", e).partition(Some(i)).path(&ipath))?
        };
        let sam = align::records_to_sam(&records, &reads, &seg.span(), &name);
        let bytes = seqio::sam_bytes(&sam, &[(name, seg.len() as u64)]);
        self.seal_to("align", Some(i), &self.work.sam(i), &bytes)
    }

    fn align_external(&self, i: u32, seg: &ReferenceSegment, reads: &[ReadRecord]) -> Result<Vec<AlignmentRecord>> {
        let scratch = self.work.scratch_dir();
        let reads_path = scratch.join(format!("part_{i}.fq"));
        let mut fq = Vec::new();
        seqio::write_fastq(&mut fq, reads).expect("writing to a Vec cannot fail");
        write_file("align", &reads_path, &fq)?;
        let out = align::align_external(
            &self.cfg.align.aligner_cmd,
            &self.work.partition_fasta(i),
            &reads_path,
            &seg.span(),
            &seg.name(),
        );
        let _ = fs::remove_file(&reads_path);
        let found = out.map_err(|e| PipelineError::new("align", e).partition(Some(i)).path(&reads_path))?;
        let mut by_key: HashMap<_, AlignmentRecord> = HashMap::new();
        for r in found {
            by_key.entry(r.key()).or_insert(r);
        }
        Ok(reads
            .iter()
            .map(|r| by_key.remove(&r.key()).unwrap_or_else(|| AlignmentRecord::unmapped(r, i)))
            .collect())
    }

    fn run_merge(&self) -> Result<()> {
        let reads = self.load_reads("merge", None)?;
        let manifest = load_manifest(&self.work).map_err(|e| PipelineError { stage: "merge", ..e })?;
        let spans = manifest.spans();
        let mut per_partition = Vec::with_capacity(spans.len());
        for span in &spans {
            let i = span.partition_id;
            let path = self.work.sam(i);
            let plain = self.unseal("merge", i, &path)?;
            let sam = seqio::parse_sam(&plain).map_err(|e| PipelineError::new("merge", e).partition(Some(i)).path(&path))?;
            let recs = align::sam_to_records(&sam.records, span, &format!("part_{i}"))
                .map_err(|e| PipelineError::new("merge", e).partition(Some(i)).path(&path))?;
            per_partition.push(recs);
        }
        let merged = merge::merge(&reads, &per_partition, Some(&spans)).map_err(|e| PipelineError::new("merge", e))?;
        let out = self.work.final_output();
        let blob = merge::finalize(&merged, &reads, &self.genome.name, self.genome.len() as u64, self.user())
            .map_err(|e| PipelineError::new("merge", e).path(&out))?;
        self.reads_seen.store(reads.len(), Ordering::Relaxed);
        write_file("merge", &out, blob.as_bytes())
    }

    fn index_is_current(&self, seg: &ReferenceSegment) -> bool {
        let Ok(mut f) = fs::File::open(self.work.index(seg.partition_id)) else {
            return false;
        };
        let mut head = [0u8; 30];
        if f.read_exact(&mut head).is_err() || &head[..4] != INDEX_MAGIC {
            return false;
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().unwrap());
        u32_at(6) == seg.partition_id
            && u32_at(10) as usize == self.cfg.align.seed_length
            && u64_at(14) == seg.len() as u64
            && u64_at(22) == seg.checksum()
    }

    fn cache(&self) -> CacheState {
        let partitions = load_manifest(&self.work).is_ok_and(|m| {
            m.layout_id == hex::encode(self.layout)
                && m.segments.len() == self.segments.len()
                && self.segments.iter().all(|s| self.work.partition_fasta(s.partition_id).is_file())
        });
        let index = partitions && self.segments.iter().all(|s| self.index_is_current(s));
        let bloom = partitions
            && self
                .segments
                .iter()
                .all(|s| self.work.bloom(&self.spec.file_name(s.partition_id)).is_file());
        CacheState { partitions, index, bloom }
    }

    /// Working-set and boundary-crossing estimates for the cost model.
    fn annotate(&self, graph: &mut TaskGraph, input_bytes: u64) {
        let p = self.segments.len() as u64;
        let filter_bytes = self.spec.m / 8;
        for t in graph.tasks_mut() {
            let seg_len = t
                .partition
                .and_then(|i| self.segments.get(i as usize))
                .map_or(0, |s| s.len() as u64);
            t.declared_working_set = match t.kind {
                TaskKind::Partition => 2 * self.genome.len() as u64,
                TaskKind::Index => seg_len * 13,
                TaskKind::BloomBuild => filter_bytes * p + self.genome.len() as u64,
                TaskKind::Dispatch => filter_bytes + 2 * input_bytes,
                TaskKind::Align => seg_len * 13 + input_bytes.div_ceil(p),
                TaskKind::Merge => 3 * input_bytes,
            };
            if t.requires_secure {
                t.ecalls = 1;
                t.ocalls = t.declared_working_set.div_ceil(4096);
            }
        }
    }

    fn execute(&self, graph: &TaskGraph, opts: &ExecOptions) -> Result<RunReport> {
        execute(graph, opts, |t| self.run_task(t)).map_err(|e| match e {
            ExecError::Task { source, .. } => source,
            ExecError::NoWorkers(pool) => PipelineError::new(
                "scheduler",
                Cause::Invalid(format!("no {} workers configured", pool.name())),
            ),
            ExecError::InvalidProfile(m) => PipelineError::new("scheduler", Cause::Invalid(m)),
            ExecError::Panicked { kind, message, .. } => {
                PipelineError::new("scheduler", Cause::Invalid(format!("{kind} task panicked: {message}")))
            }
        })
    }
}

/// Which preparation artifacts a run with `cfg` could reuse.
pub fn cache_state(cfg: &Config, genome: &ReferenceGenome) -> Result<CacheState> {
    Ok(Context::new(cfg, genome)?.cache())
}

pub fn load_keys(cfg: &Config) -> Result<(RootSecret, RootSecret)> {
    let root = RootSecret::load(&cfg.keys.root_key)
        .map_err(|e| PipelineError::new("keys", e).path(&cfg.keys.root_key))?;
    let user = RootSecret::load(&cfg.keys.user_key)
        .map_err(|e| PipelineError::new("keys", e).path(&cfg.keys.user_key))?;
    Ok((root, user))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Cached,
    Built,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub stages: Vec<(TaskKind, StageStatus)>,
    pub report: RunReport,
    pub filter_bits: u64,
}

impl PrepareSummary {
    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|(_, s)| *s == StageStatus::Cached)
    }
}

fn status(cached: bool) -> StageStatus {
    if cached {
        StageStatus::Cached
    } else {
        StageStatus::Built
    }
}

/// Builds whatever of partitions, indexes and filters is missing or stale.
pub fn prepare(cfg: &Config, genome: &ReferenceGenome) -> Result<PrepareSummary> {
    let ctx = Context::new(cfg, genome)?;
    let cache = ctx.cache();
    let full = build_task_graph(cfg.partitions, cache);
    let prep: Vec<Task> = full.tasks().iter().filter(|t| !t.requires_secure).cloned().collect();
    let mut graph = TaskGraph::from_tasks(prep, cfg.partitions).expect("preparation tasks precede secure ones");
    ctx.annotate(&mut graph, 0);
    let mut opts = ExecOptions::new(cfg.workers.secure, cfg.workers.nonsecure.max(1));
    opts.profile = Some(cfg.profile);
    let report = ctx.execute(&graph, &opts)?;
    Ok(PrepareSummary {
        stages: vec![
            (TaskKind::Partition, status(cache.partitions)),
            (TaskKind::Index, status(cache.index)),
            (TaskKind::BloomBuild, status(cache.bloom)),
        ],
        report,
        filter_bits: ctx.spec.m,
    })
}

/// Read files for a run: one FASTQ (plaintext or sealed under the user key),
/// or two mate files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadsInput {
    pub reads: PathBuf,
    pub mates: Option<PathBuf>,
}

impl ReadsInput {
    pub fn single(path: impl Into<PathBuf>) -> Self {
        Self {
            reads: path.into(),
            mates: None,
        }
    }
}

fn read_input_file(path: &Path, user: &RootSecret) -> Result<Vec<u8>> {
    let bytes = read_file("input", path)?;
    if sealvault::is_sealed(&bytes) {
        sealvault::user_decrypt(&bytes, user).map_err(|e| PipelineError::new("input", e).path(path))
    } else {
        Ok(bytes)
    }
}

/// Stages the reads as one user-sealed FASTQ (mates interleaved). Returns
/// the sealed size and whether the input is paired.
fn stage_input(work: &WorkDir, input: &ReadsInput, user: &RootSecret) -> Result<(u64, bool)> {
    let dest = work.sealed_input();
    let Some(mates) = &input.mates else {
        let bytes = read_file("input", &input.reads)?;
        let sealed = if sealvault::is_sealed(&bytes) {
            // authenticate now so a wrong key fails before any task runs
            sealvault::user_decrypt(&bytes, user).map_err(|e| PipelineError::new("input", e).path(&input.reads))?;
            bytes
        } else {
            seqio::read_fastq(&bytes[..]).map_err(|e| PipelineError::new("input", e).path(&input.reads))?;
            sealvault::user_encrypt_input(&bytes, user)
                .map_err(|e| PipelineError::new("input", e).path(&dest))?
                .into_bytes()
        };
        write_file("input", &dest, &sealed)?;
        return Ok((sealed.len() as u64, false));
    };
    let parse = |path: &Path| -> Result<Vec<ReadRecord>> {
        let plain = read_input_file(path, user)?;
        seqio::parse_fastq(&plain[..])
            .with_mate_suffixes(true)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PipelineError::new("input", e).path(path))
    };
    let first = parse(&input.reads)?;
    let second = parse(mates)?;
    if first.len() != second.len() {
        return Err(PipelineError::new(
            "input",
            Cause::Invalid(format!("{} reads but {} mates", first.len(), second.len())),
        )
        .path(mates));
    }
    let mut interleaved = Vec::with_capacity(2 * first.len());
    for (a, b) in first.into_iter().zip(second) {
        if a.id != b.id {
            return Err(PipelineError::new("input", Cause::Invalid(format!("mate ids differ: {} vs {}", a.id, b.id))).path(mates));
        }
        interleaved.push(a.with_mate(Mate::First));
        interleaved.push(b.with_mate(Mate::Second));
    }
    let mut fq = Vec::new();
    seqio::write_fastq(&mut fq, &interleaved).expect("writing to a Vec cannot fail");
    let sealed = sealvault::user_encrypt_input(&fq, user).map_err(|e| PipelineError::new("input", e).path(&dest))?;
    write_file("input", &dest, sealed.as_bytes())?;
    Ok((sealed.len() as u64, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    pub output: PathBuf,
    pub report_path: PathBuf,
    pub cache: CacheState,
}

/// Runs the whole pipeline and writes the sealed SAM plus the CSV report.
pub fn run(cfg: &Config, genome: &ReferenceGenome, input: &ReadsInput) -> Result<RunOutcome> {
    let mut ctx = Context::new(cfg, genome)?;
    let keys = load_keys(cfg)?;
    ctx.keys = Some(keys);
    for dir in [ctx.work.dispatched_dir(), ctx.work.sam_dir(), ctx.work.final_dir()] {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err("input", &dir))?;
        }
    }
    let (input_bytes, paired) = stage_input(&ctx.work, input, ctx.user())?;
    ctx.paired = paired;

    let cache = ctx.cache();
    let mut graph = build_task_graph(cfg.partitions, cache);
    ctx.annotate(&mut graph, input_bytes);
    let mut opts = ExecOptions::new(cfg.workers.secure, cfg.workers.nonsecure);
    opts.profile = Some(cfg.profile);
    let mut report = ctx.execute(&graph, &opts)?;
    report.reads = ctx.reads_seen.load(Ordering::Relaxed);

    let output = ctx.work.final_output();
    let blob = read_file("merge", &output)?;
    sealvault::user_decrypt(&blob, ctx.user()).map_err(|e| PipelineError::new("merge", e).path(&output))?;

    let report_path = cfg.report_path();
    write_file("report", &report_path, report.csv_string().as_bytes())?;
    Ok(RunOutcome {
        report,
        output,
        report_path,
        cache,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dir: &Path, p: usize) -> (Config, ReferenceGenome, Vec<ReadRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let genome = synth::random_genome(&mut rng, "chrS", 20_000);
        let reads: Vec<_> = synth::plant_reads(&mut rng, &genome, 100, 100, 2)
            .into_iter()
            .map(|p| p.read)
            .collect();
        let mut cfg = Config {
            partitions: p,
            overlap: 99,
            workdir: dir.join("work"),
            ..Default::default()
        };
        cfg.keys.root_key = dir.join("root.key");
        cfg.keys.user_key = dir.join("user.key");
        RootSecret::from_bytes([1; 32]).save(&cfg.keys.root_key).unwrap();
        RootSecret::from_bytes([2; 32]).save(&cfg.keys.user_key).unwrap();
        (cfg, genome, reads)
    }

    fn write_reads(dir: &Path, reads: &[ReadRecord]) -> PathBuf {
        let path = dir.join("reads.fq");
        let mut fq = Vec::new();
        seqio::write_fastq(&mut fq, reads).unwrap();
        fs::write(&path, fq).unwrap();
        path
    }

    #[test]
    fn prepare_is_idempotent_and_scoped() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, genome, _) = setup(dir.path(), 3);
        assert!(!prepare(&cfg, &genome).unwrap().all_cached());
        let again = prepare(&cfg, &genome).unwrap();
        assert!(again.all_cached());
        assert!(again.report.tasks.is_empty());

        cfg.bloom.bmer = 21;
        let s = prepare(&cfg, &genome).unwrap();
        assert_eq!(
            s.stages,
            vec![
                (TaskKind::Partition, StageStatus::Cached),
                (TaskKind::Index, StageStatus::Cached),
                (TaskKind::BloomBuild, StageStatus::Built)
            ]
        );

        cfg.partitions = 4;
        let s = prepare(&cfg, &genome).unwrap();
        assert!(s.stages.iter().all(|(_, st)| *st == StageStatus::Built));
    }

    #[test]
    fn run_seals_everything() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, genome, reads) = setup(dir.path(), 3);
        let path = write_reads(dir.path(), &reads);
        let out = run(&cfg, &genome, &ReadsInput::single(&path)).unwrap();
        assert_eq!(out.report.reads, 100);
        assert!(out.report_path.is_file());
        let work = WorkDir::new(&cfg.workdir);
        for d in work.protected_dirs() {
            for entry in fs::read_dir(&d).unwrap() {
                let bytes = fs::read(entry.unwrap().path()).unwrap();
                assert!(sealvault::is_sealed(&bytes));
            }
        }
        let user = RootSecret::load(&cfg.keys.user_key).unwrap();
        let sam = sealvault::user_decrypt(&fs::read(&out.output).unwrap(), &user).unwrap();
        let parsed = seqio::parse_sam(&sam).unwrap();
        assert_eq!(parsed.records.len(), 100);
        assert!(parsed.records.iter().all(|r| !r.is_unmapped()));
    }

    #[test]
    fn missing_key_names_stage_and_path() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, genome, reads) = setup(dir.path(), 2);
        cfg.keys.user_key = dir.path().join("absent.key");
        let path = write_reads(dir.path(), &reads);
        let err = run(&cfg, &genome, &ReadsInput::single(&path)).unwrap_err();
        assert_eq!(err.stage, "keys");
        assert!(err.to_string().contains("absent.key"));
    }

    #[test]
    fn tampered_intermediate_fails_in_merge() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, genome, reads) = setup(dir.path(), 2);
        let path = write_reads(dir.path(), &reads);
        run(&cfg, &genome, &ReadsInput::single(&path)).unwrap();
        // re-run merge alone over a corrupted partition SAM
        let mut ctx = Context::new(&cfg, &genome).unwrap();
        ctx.keys = Some(load_keys(&cfg).unwrap());
        let sam = ctx.work.sam(1);
        let mut bytes = fs::read(&sam).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&sam, bytes).unwrap();
        let err = ctx.run_merge().unwrap_err();
        assert_eq!((err.stage, err.partition), ("merge", Some(1)));
        assert!(matches!(*err.cause, Cause::Seal(sealvault::SealError::AuthFailure)));
    }
}
