//! Run configuration. Every field has a default; a TOML file may override any
//! subset and command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::ScoringScheme;
use crate::bloom::{DEFAULT_BITS_PER_ELEMENT, DEFAULT_HASHES, DEFAULT_SEED};
use crate::dispatch::ReadScan;
use crate::refprep::{DispatchParams, DEFAULT_BMER, DEFAULT_BMER_OVERLAP, DEFAULT_SEED_LENGTH};
use crate::scheduler::EnclaveProfile;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub partitions: usize,
    /// Bases shared with the next segment; reads up to `overlap + 1` bases
    /// always fit entirely inside one segment.
    pub overlap: usize,
    pub workdir: PathBuf,
    pub report: Option<PathBuf>,
    pub bloom: BloomConfig,
    pub dispatch: DispatchConfig,
    pub align: AlignConfig,
    pub workers: WorkerConfig,
    pub keys: KeyConfig,
    pub profile: EnclaveProfile,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            partitions: 1,
            overlap: 149,
            workdir: PathBuf::from("work"),
            report: None,
            bloom: BloomConfig::default(),
            dispatch: DispatchConfig::default(),
            align: AlignConfig::default(),
            workers: WorkerConfig::default(),
            keys: KeyConfig::default(),
            profile: EnclaveProfile::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BloomConfig {
    pub bmer: usize,
    pub bmer_overlap: usize,
    /// Filter size in bits; 0 sizes it from `bits_per_element`.
    pub bits: u64,
    pub bits_per_element: f64,
    pub hashes: u32,
    pub seed: u64,
}

impl Default for BloomConfig {
    fn default() -> Self {
        Self {
            bmer: DEFAULT_BMER,
            bmer_overlap: DEFAULT_BMER_OVERLAP,
            bits: 0,
            bits_per_element: DEFAULT_BITS_PER_ELEMENT,
            hashes: DEFAULT_HASHES,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchConfig {
    pub scan: String,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self { scan: "full".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub seed_length: usize,
    /// `builtin` or `external`.
    pub aligner: String,
    /// Shell template with `{ref}` and `{reads}` placeholders.
    pub aligner_cmd: String,
    pub scoring: ScoringScheme,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            seed_length: DEFAULT_SEED_LENGTH,
            aligner: "builtin".into(),
            aligner_cmd: String::new(),
            scoring: ScoringScheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    pub secure: usize,
    pub nonsecure: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self { secure: 4, nonsecure: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyConfig {
    pub root_key: PathBuf,
    pub user_key: PathBuf,
}

impl Default for KeyConfig {
    fn default() -> Self {
        Self {
            root_key: PathBuf::from("keys/root.key"),
            user_key: PathBuf::from("keys/user.key"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Modeled whole-reference index size; each partition gets `index_mb / p`.
    pub index_mb: f64,
    /// Modeled unpaged seconds of the whole align and dispatch stages.
    pub align_s: f64,
    pub dispatch_s: f64,
    pub merge_s: f64,
    pub merge_working_set_mb: f64,
    pub genome_length: usize,
    pub reads: usize,
    pub read_length: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            index_mb: 5000.0,
            align_s: 32.0,
            dispatch_s: 2.0,
            merge_s: 0.5,
            merge_working_set_mb: 64.0,
            genome_length: 200_000,
            reads: 2000,
            read_length: 150,
            seed: 42,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn dispatch_params(&self) -> Result<DispatchParams, ConfigError> {
        DispatchParams::new(self.bloom.bmer, self.bloom.bmer_overlap, self.partitions)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn read_scan(&self) -> Result<ReadScan, ConfigError> {
        self.dispatch.scan.parse().map_err(ConfigError::Invalid)
    }

    pub fn report_path(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.workdir.join("report.csv"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.partitions == 0 {
            return Err(ConfigError::Invalid("partitions must be at least 1".into()));
        }
        self.dispatch_params()?;
        self.read_scan()?;
        self.align
            .scoring
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.profile.validate().map_err(ConfigError::Invalid)?;
        if self.align.seed_length == 0 || self.align.seed_length > crate::refprep::MAX_SEED_LENGTH {
            return Err(ConfigError::Invalid(format!(
                "seed length must be in 1..={}",
                crate::refprep::MAX_SEED_LENGTH
            )));
        }
        match self.align.aligner.as_str() {
            "builtin" => {}
            "external" if !self.align.aligner_cmd.trim().is_empty() => {}
            "external" => return Err(ConfigError::Invalid("external aligner needs aligner_cmd".into())),
            other => return Err(ConfigError::Invalid(format!("unknown aligner {other:?}"))),
        }
        if self.workers.secure == 0 {
            return Err(ConfigError::Invalid("at least one secure worker is required".into()));
        }
        Ok(())
    }
}
