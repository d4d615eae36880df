use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hysec_core::pipeline::{self, bench, ReadsInput, StageStatus};
use hysec_core::sealvault::{self, RootSecret};
use hysec_core::seqio::{self, ReferenceGenome};
use hysec_core::{synth, Config, EnclaveProfile};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{BenchArgs, Cli, Command, ExecArgs, KeygenArgs, LayoutArgs, PrepareArgs, RunArgs, SealArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Prepare(a) => prepare(base, a),
        Command::Run(a) => run(base, a),
        Command::Bench(a) => bench_cmd(base, a),
        Command::Seal(a) => seal(&base, a, true),
        Command::Unseal(a) => seal(&base, a, false),
        Command::Keygen(a) => keygen(a),
        Command::Config(a) => {
            base.validate()?;
            if a.show {
                print!("{}", base.to_toml());
            } else {
                println!("configuration ok");
            }
            Ok(())
        }
    }
}

fn apply_layout(cfg: &mut Config, a: &LayoutArgs) {
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(a.partitions => cfg.partitions);
    set!(a.overlap => cfg.overlap);
    set!(a.bmer => cfg.bloom.bmer);
    set!(a.bmer_overlap => cfg.bloom.bmer_overlap);
    set!(a.seed_len => cfg.align.seed_length);
    set!(a.bloom_bits => cfg.bloom.bits);
    set!(a.bloom_hashes => cfg.bloom.hashes);
    set!(a.workdir => cfg.workdir);
}

fn apply_exec(cfg: &mut Config, a: &ExecArgs) -> Result<()> {
    if let Some(n) = a.secure_workers {
        cfg.workers.secure = n;
    }
    if let Some(n) = a.nonsecure_workers {
        cfg.workers.nonsecure = n;
    }
    if let Some(path) = &a.profile {
        let text = fs::read_to_string(path).with_context(|| format!("reading profile {}", path.display()))?;
        cfg.profile = toml::from_str::<EnclaveProfile>(&text).with_context(|| format!("parsing profile {}", path.display()))?;
    }
    if let Some(p) = &a.root_key {
        cfg.keys.root_key = p.clone();
    }
    if let Some(p) = &a.user_key {
        cfg.keys.user_key = p.clone();
    }
    if let Some(s) = &a.scan {
        cfg.dispatch.scan = s.clone();
    }
    if let Some(s) = &a.aligner {
        cfg.align.aligner = s.clone();
    }
    if let Some(s) = &a.aligner_cmd {
        cfg.align.aligner_cmd = s.clone();
    }
    Ok(())
}

fn load_reference(path: &Path) -> Result<ReferenceGenome> {
    let file = fs::File::open(path).with_context(|| format!("opening reference {}", path.display()))?;
    seqio::parse_fasta(BufReader::new(file)).with_context(|| format!("parsing reference {}", path.display()))
}

fn prepare(mut cfg: Config, a: PrepareArgs) -> Result<()> {
    apply_layout(&mut cfg, &a.layout);
    cfg.validate()?;
    let genome = load_reference(&a.reference)?;
    let summary = pipeline::prepare(&cfg, &genome)?;
    for (kind, status) in &summary.stages {
        let s = match status {
            StageStatus::Cached => "cached",
            StageStatus::Built => "built",
        };
        println!("{kind}: {s}");
    }
    println!("filter bits: {}", summary.filter_bits);
    Ok(())
}

fn reads_input(paths: &[PathBuf]) -> Result<ReadsInput> {
    match paths {
        [one] => Ok(ReadsInput::single(one)),
        [a, b] => Ok(ReadsInput {
            reads: a.clone(),
            mates: Some(b.clone()),
        }),
        _ => bail!("--reads takes one file or two comma-separated mate files"),
    }
}

fn run(mut cfg: Config, a: RunArgs) -> Result<()> {
    apply_layout(&mut cfg, &a.layout);
    apply_exec(&mut cfg, &a.exec)?;
    if let Some(r) = &a.report {
        cfg.report = Some(r.clone());
    }
    cfg.validate()?;
    let genome = load_reference(&a.reference)?;
    let input = reads_input(&a.reads)?;
    let outcome = pipeline::run(&cfg, &genome, &input)?;
    println!("output: {}", outcome.output.display());
    println!("report: {}", outcome.report_path.display());
    println!(
        "reads: {}  wall: {:.3}s  modeled: {:.3}s",
        outcome.report.reads, outcome.report.total_wall_s, outcome.report.total_modeled_s
    );
    Ok(())
}

/// Uses the configured key files, or creates fresh ones under `dir` when
/// neither exists.
fn ensure_keys(cfg: &mut Config, dir: &Path) -> Result<()> {
    if cfg.keys.root_key.exists() || cfg.keys.user_key.exists() {
        return Ok(());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.keys.root_key = dir.join("root.key");
    cfg.keys.user_key = dir.join("user.key");
    for path in [&cfg.keys.root_key, &cfg.keys.user_key] {
        if !path.exists() {
            RootSecret::generate().save(path)?;
        }
    }
    Ok(())
}

fn bench_cmd(mut cfg: Config, a: BenchArgs) -> Result<()> {
    apply_layout(&mut cfg, &a.layout);
    apply_exec(&mut cfg, &a.exec)?;
    if let Some(mb) = a.model_index_mb {
        cfg.bench.index_mb = mb;
    }
    if a.partitions_list.is_empty() || a.partitions_list.contains(&0) {
        bail!("--partitions-list needs positive partition counts");
    }
    let root = cfg.workdir.clone();
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    ensure_keys(&mut cfg, &root.join("keys"))?;

    let (genome, reads) = match (&a.reference, &a.reads) {
        (Some(r), Some(q)) => (load_reference(r)?, q.clone()),
        _ => {
            let b = &cfg.bench;
            let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
            let genome = synth::random_genome(&mut rng, "synthetic", b.genome_length);
            let planted: Vec<_> = synth::plant_reads(&mut rng, &genome, b.reads, b.read_length, 2)
                .into_iter()
                .map(|p| p.read)
                .collect();
            let path = root.join("bench_reads.fq");
            let mut buf = Vec::new();
            seqio::write_fastq(&mut buf, &planted)?;
            fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            if a.layout.overlap.is_none() {
                cfg.overlap = b.read_length - 1;
            }
            (genome, path)
        }
    };

    let mut rows = bench::model_speedups(&a.partitions_list, &cfg.bench, &cfg.profile);
    for row in &mut rows {
        let mut run_cfg = cfg.clone();
        run_cfg.partitions = row.partitions;
        run_cfg.workers.secure = row.partitions;
        run_cfg.workdir = root.join(format!("p{}", row.partitions));
        run_cfg.report = None;
        run_cfg.validate()?;
        let outcome = pipeline::run(&run_cfg, &genome, &ReadsInput::single(&reads))?;
        info!("p={} measured {:.3}s", row.partitions, outcome.report.total_wall_s);
        row.measured_wall_s = Some(outcome.report.total_wall_s);
    }
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            bench::write_bench_csv(&rows, f)?;
            println!("bench: {}", path.display());
        }
        None => bench::write_bench_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn seal(cfg: &Config, a: SealArgs, encrypt: bool) -> Result<()> {
    let key_path = a.user_key.as_ref().unwrap_or(&cfg.keys.user_key);
    let key = RootSecret::load(key_path)?;
    let input = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let out = if encrypt {
        sealvault::user_encrypt_input(&input, &key)?.into_bytes()
    } else {
        sealvault::user_decrypt(&input, &key).with_context(|| format!("unsealing {}", a.input.display()))?
    };
    let mut f = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    f.write_all(&out)?;
    Ok(())
}

fn keygen(a: KeygenArgs) -> Result<()> {
    if a.out.exists() && !a.force {
        bail!("{} exists; pass --force to overwrite", a.out.display());
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    RootSecret::generate().save(&a.out)?;
    println!("key: {}", a.out.display());
    Ok(())
}
