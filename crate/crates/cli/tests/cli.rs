use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hysec_core::seqio::{self, ReadRecord};
use hysec_core::{synth, Config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn hysec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hysec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hysec(dir, args);
    assert!(
        out.status.success(),
        "hysec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of_failure(dir: &Path, args: &[&str]) -> String {
    let out = hysec(dir, args);
    assert!(!out.status.success(), "hysec {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// Reference, reads and keys in a fresh directory.
fn fixture(n_reads: usize) -> (TempDir, Vec<ReadRecord>) {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let genome = synth::random_genome(&mut rng, "chrC", 24_000);
    let reads: Vec<_> = synth::plant_reads(&mut rng, &genome, n_reads, 100, 1)
        .into_iter()
        .map(|p| p.read)
        .collect();
    let mut fa = Vec::new();
    seqio::write_fasta(&mut fa, &genome.name, &genome.sequence).unwrap();
    fs::write(dir.path().join("ref.fa"), fa).unwrap();
    write_reads(&dir.path().join("reads.fq"), &reads);
    ok(dir.path(), &["keygen", "--out", "keys/root.key"]);
    ok(dir.path(), &["keygen", "--out", "keys/user.key"]);
    (dir, reads)
}

fn write_reads(path: &Path, reads: &[ReadRecord]) {
    let mut fq = Vec::new();
    seqio::write_fastq(&mut fq, reads).unwrap();
    fs::write(path, fq).unwrap();
}

fn run_and_unseal(dir: &Path, p: usize, reads: &str) -> Vec<u8> {
    let workdir = format!("work{p}");
    let p = p.to_string();
    ok(
        dir,
        &["run", "--ref", "ref.fa", "--reads", reads, "--partitions", &p, "--overlap", "99", "--workdir", &workdir],
    );
    let sealed = format!("{workdir}/final/output.sam.sealed");
    let plain = format!("out{p}.sam");
    ok(dir, &["unseal", "--in", &sealed, "--out", &plain]);
    fs::read(dir.join(plain)).unwrap()
}

#[test]
fn output_is_identical_across_partition_counts() {
    let (dir, reads) = fixture(300);
    let one = run_and_unseal(dir.path(), 1, "reads.fq");
    let eight = run_and_unseal(dir.path(), 8, "reads.fq");
    assert_eq!(one, eight);
    let sam = seqio::parse_sam(&one).unwrap();
    assert_eq!(sam.records.len(), reads.len());
    assert!(sam.records.iter().all(|r| !r.is_unmapped()));
    assert!(dir.path().join("work8/report.csv").exists());
}

#[test]
fn paired_reads_run() {
    let (dir, _) = fixture(0);
    let genome = {
        let bytes = fs::read(dir.path().join("ref.fa")).unwrap();
        seqio::parse_fasta(&bytes[..]).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs = synth::plant_pairs(&mut rng, &genome, 50, 100, 300);
    let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    write_reads(&dir.path().join("r1.fq"), &a);
    write_reads(&dir.path().join("r2.fq"), &b);
    let sam = run_and_unseal(dir.path(), 4, "r1.fq,r2.fq");
    let sam = seqio::parse_sam(&sam).unwrap();
    assert_eq!(sam.records.len(), 100);
    assert!(sam.records.iter().all(|r| r.flag & seqio::flags::PAIRED != 0));
}

#[test]
fn empty_reads_give_header_only_sam() {
    let (dir, _) = fixture(0);
    let sam = run_and_unseal(dir.path(), 3, "reads.fq");
    let text = String::from_utf8(sam).unwrap();
    assert!(text.lines().count() > 0);
    assert!(text.lines().all(|l| l.starts_with('@')), "{text}");
}

#[test]
fn second_prepare_reuses_artifacts() {
    let (dir, _) = fixture(0);
    let args = ["prepare", "--ref", "ref.fa", "--partitions", "4", "--overlap", "99"];
    let first = ok(dir.path(), &args);
    assert!(first.contains("index: built"), "{first}");
    let second = ok(dir.path(), &args);
    for stage in ["partition", "index", "bloom_build"] {
        assert!(second.contains(&format!("{stage}: cached")), "{second}");
    }
    let third = ok(dir.path(), &["prepare", "--ref", "ref.fa", "--partitions", "4", "--overlap", "99", "--bmer", "21"]);
    assert!(third.contains("bloom_build: built"), "{third}");
    assert!(third.contains("index: cached"), "{third}");
}

#[test]
fn config_file_is_merged_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "partitions = 6\n[workers]\nsecure = 3\n").unwrap();
    let shown = ok(dir.path(), &["--config", "c.toml", "config", "--show"]);
    let cfg: Config = toml::from_str(&shown).unwrap();
    assert_eq!(cfg.partitions, 6);
    assert_eq!(cfg.workers.secure, 3);
    assert_eq!(cfg.workers.nonsecure, Config::default().workers.nonsecure);

    fs::write(dir.path().join("bad.toml"), "partitions = 0\n").unwrap();
    let err = stderr_of_failure(dir.path(), &["--config", "bad.toml", "config"]);
    assert!(err.contains("partitions"), "{err}");
    fs::write(dir.path().join("typo.toml"), "partitoins = 2\n").unwrap();
    let err = stderr_of_failure(dir.path(), &["--config", "typo.toml", "config"]);
    assert!(err.contains("typo.toml"), "{err}");
}

#[test]
fn seal_round_trip_and_wrong_key() {
    let (dir, _) = fixture(20);
    let d = dir.path();
    ok(d, &["seal", "--in", "reads.fq", "--out", "reads.fq.sealed", "--user-key", "keys/user.key"]);
    let sealed = fs::read(d.join("reads.fq.sealed")).unwrap();
    assert!(hysec_core::sealvault::is_sealed(&sealed));
    ok(d, &["unseal", "--in", "reads.fq.sealed", "--out", "back.fq", "--user-key", "keys/user.key"]);
    assert_eq!(fs::read(d.join("back.fq")).unwrap(), fs::read(d.join("reads.fq")).unwrap());
    let err = stderr_of_failure(d, &["unseal", "--in", "reads.fq.sealed", "--out", "x.fq", "--user-key", "keys/root.key"]);
    assert!(err.contains("reads.fq.sealed"), "{err}");
    assert!(!d.join("x.fq").exists());

    // a run accepts sealed input and maps the same reads
    let from_plain = run_and_unseal(d, 2, "reads.fq");
    let from_sealed = run_and_unseal(d, 2, "reads.fq.sealed");
    assert_eq!(from_plain, from_sealed);
}

#[test]
fn keygen_refuses_to_overwrite() {
    let (dir, _) = fixture(0);
    let before = fs::read(dir.path().join("keys/user.key")).unwrap();
    let err = stderr_of_failure(dir.path(), &["keygen", "--out", "keys/user.key"]);
    assert!(err.contains("--force"), "{err}");
    assert_eq!(fs::read(dir.path().join("keys/user.key")).unwrap(), before);
    ok(dir.path(), &["keygen", "--out", "keys/user.key", "--force"]);
    assert_ne!(fs::read(dir.path().join("keys/user.key")).unwrap(), before);
}

#[test]
fn errors_name_stage_and_path() {
    let (dir, _) = fixture(5);
    let err = stderr_of_failure(dir.path(), &["run", "--ref", "ref.fa", "--reads", "nope.fq"]);
    assert!(err.contains("[input]") && err.contains("nope.fq"), "{err}");

    fs::write(dir.path().join("broken.fq"), "@r1\nACGT\n+\nII\n").unwrap();
    let err = stderr_of_failure(dir.path(), &["run", "--ref", "ref.fa", "--reads", "broken.fq"]);
    assert!(err.contains("[input]") && err.contains("broken.fq"), "{err}");

    let err = stderr_of_failure(
        dir.path(),
        &["run", "--ref", "ref.fa", "--reads", "reads.fq", "--user-key", "keys/none.key"],
    );
    assert!(err.contains("[keys]") && err.contains("none.key"), "{err}");
}

#[test]
fn tampered_sealed_input_is_rejected() {
    let (dir, _) = fixture(40);
    let d = dir.path();
    ok(d, &["seal", "--in", "reads.fq", "--out", "reads.fq.sealed", "--user-key", "keys/user.key"]);
    let path = d.join("reads.fq.sealed");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&path, bytes).unwrap();
    let err = stderr_of_failure(d, &["run", "--ref", "ref.fa", "--reads", "reads.fq.sealed", "--overlap", "99"]);
    assert!(err.contains("[input]") && err.contains("reads.fq.sealed"), "{err}");
    assert!(!d.join("work/final/output.sam.sealed").exists());
}

#[test]
fn bench_writes_measured_and_modeled_columns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("small.toml"),
        "[bench]\ngenome_length = 20000\nreads = 100\nread_length = 100\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &["--config", "small.toml", "bench", "--partitions-list", "1,2", "--workdir", "bw", "--out", "b.csv"],
    );
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "partitions,measured_wall_s,modeled_parallel_s,modeled_baseline_s,speedup");
    assert_eq!(lines.len(), 3);
    for (line, p) in lines[1..].iter().zip(["1", "2"]) {
        let cols: Vec<_> = line.split(',').collect();
        assert_eq!(cols[0], p);
        assert!(cols[1].parse::<f64>().unwrap() > 0.0);
        assert!(cols[4].parse::<f64>().unwrap() > 0.0);
    }
    assert!(dir.path().join("bw/keys/root.key").exists());
}
