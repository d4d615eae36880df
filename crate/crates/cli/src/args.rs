use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hysec", version, about = "Partitioned reads mapping with sealed intermediates")]
pub struct Cli {
    /// TOML configuration; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition the reference and build indexes and Bloom filters (cached).
    Prepare(PrepareArgs),
    /// Run the whole pipeline and write the sealed SAM and a CSV report.
    Run(RunArgs),
    /// Partition-count study: real runs plus modeled enclave speedups.
    Bench(BenchArgs),
    /// Encrypt a file under the user key.
    Seal(SealArgs),
    /// Decrypt a file sealed under the user key.
    Unseal(SealArgs),
    /// Write a fresh 32-byte key file.
    Keygen(KeygenArgs),
    /// Validate the effective configuration, optionally printing it.
    Config(ConfigArgs),
}

#[derive(Debug, Args, Default)]
pub struct LayoutArgs {
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub bmer: Option<usize>,
    #[arg(long)]
    pub bmer_overlap: Option<usize>,
    #[arg(long)]
    pub seed_len: Option<usize>,
    #[arg(long)]
    pub bloom_bits: Option<u64>,
    #[arg(long)]
    pub bloom_hashes: Option<u32>,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ExecArgs {
    #[arg(long)]
    pub secure_workers: Option<usize>,
    #[arg(long)]
    pub nonsecure_workers: Option<usize>,
    /// TOML file with enclave profile keys (heap_mb, ocall_cost, ...).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub root_key: Option<PathBuf>,
    #[arg(long)]
    pub user_key: Option<PathBuf>,
    /// Read windows tested against the filters: full or grid.
    #[arg(long)]
    pub scan: Option<String>,
    /// builtin or external.
    #[arg(long)]
    pub aligner: Option<String>,
    /// External aligner command with {ref} and {reads} placeholders.
    #[arg(long)]
    pub aligner_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// FASTQ file, or two comma-separated mate files.
    #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
    pub reads: Vec<PathBuf>,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Reference; a seeded synthetic genome is generated when absent.
    #[arg(long = "ref", requires = "reads")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reads: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub partitions_list: Vec<usize>,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Modeled whole-reference index size in MB.
    #[arg(long)]
    pub model_index_mb: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SealArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub user_key: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing key file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print the merged configuration as TOML.
    #[arg(long)]
    pub show: bool,
}
