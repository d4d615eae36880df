//! The end-to-end driver: reference preparation, sealed dispatch, per-partition
//! alignment and merge, all run as scheduler tasks that exchange data only
//! through files in the work directory.

pub mod bench;
mod stages;
pub mod workdir;

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use stages::{
    cache_state, load_keys, load_manifest, prepare, run, ManifestSegment, Manifest, PrepareSummary, ReadsInput,
    RunOutcome, StageStatus, PIPELINE_SIGNER, PIPELINE_SIGNER_VERSION,
};
pub use workdir::WorkDir;

#[derive(Debug, Error)]
pub enum Cause {
    #[error(transparent)]
    Seq(#[from] crate::seqio::SeqError),
    #[error(transparent)]
    RefPrep(#[from] crate::refprep::RefPrepError),
    #[error(transparent)]
    Bloom(#[from] crate::bloom::BloomError),
    #[error(transparent)]
    Dispatch(#[from] crate::dispatch::DispatchError),
    #[error(transparent)]
    Align(#[from] crate::align::AlignError),
    #[error(transparent)]
    Merge(#[from] crate::merge::MergeError),
    #[error(transparent)]
    Seal(#[from] crate::sealvault::SealError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// A failure with the stage, partition and file it concerns.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub partition: Option<u32>,
    pub path: Option<PathBuf>,
    pub cause: Box<Cause>,
}

impl PipelineError {
    pub fn new(stage: &'static str, cause: impl Into<Cause>) -> Self {
        Self {
            stage,
            partition: None,
            path: None,
            cause: Box::new(cause.into()),
        }
    }

    pub fn partition(mut self, p: Option<u32>) -> Self {
        self.partition = p;
        self
    }

    pub fn path(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.stage)?;
        if let Some(p) = self.partition {
            write!(f, " partition {p}")?;
        }
        write!(f, "]")?;
        if let Some(path) = &self.path {
            write!(f, " {}", path.display())?;
        }
        write!(f, ": {}", self.cause)
    }
}

// The cause is already part of the message, so the chain continues below it.
impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        std::error::Error::source(&*self.cause)
    }
}
