//! Partitioned reads mapping with sealed intermediates: Bloom-filter dispatch
//! of reads to reference partitions, per-partition seed-and-extend alignment,
//! merge, and a scheduler that separates secure from non-secure work and
//! models enclave overheads.

pub mod align;
pub mod bloom;
pub mod config;
pub mod dispatch;
pub mod merge;
pub mod pipeline;
pub mod refprep;
pub mod scheduler;
pub mod sealvault;
pub mod seqio;
pub mod synth;

pub use align::{AlignmentRecord, ScoringScheme};
pub use bloom::BloomFilter;
pub use config::Config;
pub use dispatch::{DispatchedQuery, ReadScan};
pub use refprep::{DispatchParams, KmerIndex, ReferenceSegment, SegmentSpan};
pub use scheduler::{EnclaveProfile, RunReport, Task, TaskGraph, TaskKind};
pub use sealvault::{KeyPolicy, RootSecret, SealedBlob, Vault};
pub use seqio::{ReadRecord, ReferenceGenome, SamRecord};
