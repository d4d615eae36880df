//! Task-graph construction, execution on secure and non-secure worker pools,
//! and the enclave cost model.

pub mod cost;
pub mod exec;
pub mod graph;
pub mod report;

pub use cost::{model_secure_overhead, overhead_breakdown, EnclaveProfile, Overhead};
pub use exec::{execute, list_schedule, simulate, ExecError, ExecOptions, Placement, Pool};
pub use graph::{build_task_graph, CacheState, Task, TaskGraph, TaskId, TaskKind};
pub use report::{critical_path, RunReport, StageStats, TaskReport};
