//! Partition-count study. Speedups come from the cost model applied to a
//! genome-scale workload (`BenchConfig`), since desk-scale task times are far
//! below the fixed enclave start-up cost; measured wall times of real runs
//! are reported alongside.

use std::io::{self, Write};

use serde::Serialize;

use crate::config::BenchConfig;
use crate::scheduler::{
    build_task_graph, model_secure_overhead, simulate, CacheState, EnclaveProfile, ExecOptions, RunReport, TaskGraph,
    TaskKind,
};

const MB: f64 = 1024.0 * 1024.0;
const PAGE: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub partitions: usize,
    pub measured_wall_s: Option<f64>,
    pub modeled_parallel_s: f64,
    pub modeled_baseline_s: f64,
    pub speedup: f64,
}

fn bytes(mb: f64) -> u64 {
    (mb * MB).round() as u64
}

/// Dispatch, align and merge for `p` partitions with modeled working sets:
/// per-partition tasks hold `index_mb / p`.
pub fn model_graph(p: usize, bench: &BenchConfig) -> TaskGraph {
    let mut g = build_task_graph(p, CacheState::all_cached());
    for t in g.tasks_mut() {
        t.declared_working_set = match t.kind {
            TaskKind::Dispatch | TaskKind::Align => bytes(bench.index_mb / p as f64),
            _ => bytes(bench.merge_working_set_mb),
        };
        t.ecalls = 1;
        t.ocalls = t.declared_working_set.div_ceil(PAGE);
    }
    g
}

fn base_time(kind: TaskKind, p: usize, bench: &BenchConfig) -> f64 {
    match kind {
        TaskKind::Dispatch => bench.dispatch_s / p as f64,
        TaskKind::Align => bench.align_s / p as f64,
        TaskKind::Merge => bench.merge_s,
        _ => 0.0,
    }
}

/// The whole workload as one secure task holding the full index.
pub fn model_baseline(bench: &BenchConfig, profile: &EnclaveProfile) -> f64 {
    let ws = bytes(bench.index_mb);
    model_secure_overhead(
        profile,
        profile.heap_mb,
        1,
        ws.div_ceil(PAGE),
        bench.index_mb,
        bench.dispatch_s + bench.align_s + bench.merge_s,
    )
}

/// Modeled run with one secure worker per partition.
pub fn model_parallel(p: usize, bench: &BenchConfig, profile: &EnclaveProfile) -> RunReport {
    let g = model_graph(p, bench);
    let mut opts = ExecOptions::new(p, 1);
    opts.profile = Some(*profile);
    simulate::<()>(&g, &opts, |t| base_time(t.kind, p, bench)).expect("model graph has workers for every pool")
}

pub fn model_speedups(ps: &[usize], bench: &BenchConfig, profile: &EnclaveProfile) -> Vec<BenchRow> {
    let baseline = model_baseline(bench, profile);
    ps.iter()
        .map(|&p| {
            let parallel = model_parallel(p, bench, profile).total_modeled_s;
            BenchRow {
                partitions: p,
                measured_wall_s: None,
                modeled_parallel_s: parallel,
                modeled_baseline_s: baseline,
                speedup: baseline / parallel,
            }
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> io::Result<()> {
    writeln!(w, "partitions,measured_wall_s,modeled_parallel_s,modeled_baseline_s,speedup")?;
    for r in rows {
        let measured = r.measured_wall_s.map_or_else(String::new, |s| format!("{s:.6}"));
        writeln!(
            w,
            "{},{measured},{:.6},{:.6},{:.6}",
            r.partitions, r.modeled_parallel_s, r.modeled_baseline_s, r.speedup
        )?;
    }
    Ok(())
}
