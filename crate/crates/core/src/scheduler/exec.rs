use std::collections::BTreeSet;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use crossbeam_channel::unbounded;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::cost::{model_secure_overhead, EnclaveProfile};
use super::graph::{Task, TaskGraph, TaskId, TaskKind};
use super::report::{critical_path, RunReport, TaskReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Secure,
    NonSecure,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::Secure => "secure",
            Pool::NonSecure => "nonsecure",
        }
    }

    pub fn for_task(task: &Task) -> Self {
        if task.requires_secure {
            Pool::Secure
        } else {
            Pool::NonSecure
        }
    }

    fn slot(self) -> usize {
        match self {
            Pool::Secure => 0,
            Pool::NonSecure => 1,
        }
    }
}

#[derive(Debug)]
pub enum ExecError<E> {
    NoWorkers(Pool),
    InvalidProfile(String),
    Task {
        id: TaskId,
        kind: TaskKind,
        partition: Option<u32>,
        cancelled: usize,
        source: E,
    },
    Panicked {
        id: TaskId,
        kind: TaskKind,
        message: String,
    },
}

impl<E: fmt::Display> fmt::Display for ExecError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::NoWorkers(p) => write!(f, "graph has {} tasks but the {} pool has no workers", p.name(), p.name()),
            ExecError::InvalidProfile(m) => write!(f, "invalid enclave profile: {m}"),
            ExecError::Task {
                kind,
                partition,
                cancelled,
                source,
                ..
            } => {
                write!(f, "{kind}")?;
                if let Some(p) = partition {
                    write!(f, " (partition {p})")?;
                }
                write!(f, " failed: {source}")?;
                if *cancelled > 0 {
                    write!(f, "; {cancelled} dependent task(s) cancelled")?;
                }
                Ok(())
            }
            ExecError::Panicked { kind, message, .. } => write!(f, "{kind} panicked: {message}"),
        }
    }
}

impl<E: std::error::Error + 'static> std::error::Error for ExecError<E> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ExecError::Task { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub secure_workers: usize,
    pub nonsecure_workers: usize,
    pub profile: Option<EnclaveProfile>,
    /// Randomizes the dispatch order of simultaneously ready tasks.
    pub shuffle_seed: Option<u64>,
}

impl ExecOptions {
    pub fn new(secure_workers: usize, nonsecure_workers: usize) -> Self {
        Self {
            secure_workers,
            nonsecure_workers,
            ..Default::default()
        }
    }

    fn workers(&self, pool: Pool) -> usize {
        match pool {
            Pool::Secure => self.secure_workers,
            Pool::NonSecure => self.nonsecure_workers,
        }
    }

    fn check<E>(&self, graph: &TaskGraph) -> Result<(), ExecError<E>> {
        for pool in [Pool::Secure, Pool::NonSecure] {
            if graph.needs_pool(pool == Pool::Secure) && self.workers(pool) == 0 {
                return Err(ExecError::NoWorkers(pool));
            }
        }
        if let Some(p) = &self.profile {
            p.validate().map_err(ExecError::InvalidProfile)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub pool: Pool,
    pub worker: usize,
    pub start: f64,
    pub end: f64,
}

/// Deterministic list scheduling: whenever a worker is idle, the ready task
/// with the lowest id in its pool starts. `duration(task, cold)` gives the
/// run time, where `cold` marks the first task on a worker.
pub fn list_schedule(
    graph: &TaskGraph,
    secure_workers: usize,
    nonsecure_workers: usize,
    mut duration: impl FnMut(&Task, bool) -> f64,
) -> Vec<Placement> {
    let n = graph.len();
    let dependents = graph.dependents();
    let mut waiting: Vec<usize> = graph.tasks().iter().map(|t| t.deps.len()).collect();
    let mut ready: BTreeSet<TaskId> = (0..n).filter(|&i| waiting[i] == 0).collect();
    let counts = [secure_workers, nonsecure_workers];
    let mut busy = [vec![false; secure_workers], vec![false; nonsecure_workers]];
    let mut warm = busy.clone();
    let mut placements: Vec<Option<Placement>> = vec![None; n];
    let mut running: Vec<(f64, TaskId)> = Vec::new();
    let mut now = 0.0f64;

    loop {
        let candidates: Vec<TaskId> = ready.iter().copied().collect();
        for id in candidates {
            let task = &graph.tasks()[id];
            let pool = Pool::for_task(task);
            let s = pool.slot();
            let Some(w) = (0..counts[s]).find(|&w| !busy[s][w]) else { continue };
            let d = duration(task, !warm[s][w]);
            busy[s][w] = true;
            warm[s][w] = true;
            placements[id] = Some(Placement {
                pool,
                worker: w,
                start: now,
                end: now + d,
            });
            running.push((now + d, id));
            ready.remove(&id);
        }
        let Some(next) = running.iter().map(|r| r.0).reduce(f64::min) else {
            break;
        };
        now = next;
        let (done, rest): (Vec<_>, Vec<_>) = running.into_iter().partition(|r| r.0 <= next);
        running = rest;
        for (_, id) in done {
            let p = placements[id].expect("placed");
            busy[p.pool.slot()][p.worker] = false;
            for &d in &dependents[id] {
                waiting[d] -= 1;
                if waiting[d] == 0 {
                    ready.insert(d);
                }
            }
        }
    }
    placements
        .into_iter()
        .map(|p| p.expect("every task is scheduled when both pools have workers"))
        .collect()
}

fn modeled(task: &Task, base: f64, cold: bool, profile: Option<&EnclaveProfile>) -> f64 {
    match profile {
        Some(p) if task.requires_secure => {
            let heap = if cold { p.heap_mb } else { 0.0 };
            model_secure_overhead(p, heap, task.ecalls, task.ocalls, task.working_set_mb(), base)
        }
        _ => base,
    }
}

fn makespan(placements: &[Placement]) -> f64 {
    placements.iter().map(|p| p.end).fold(0.0, f64::max)
}

/// Builds a report from per-task base times: the modeled columns come from a
/// list-scheduling replay under the profile.
fn assemble(
    graph: &TaskGraph,
    opts: &ExecOptions,
    observed: &[Placement],
    total_wall_s: f64,
) -> RunReport {
    let base: Vec<f64> = observed.iter().map(|p| p.end - p.start).collect();
    let mut modeled_d = vec![0.0; graph.len()];
    let replay = list_schedule(graph, opts.secure_workers, opts.nonsecure_workers, |t, cold| {
        let d = modeled(t, base[t.id], cold, opts.profile.as_ref());
        modeled_d[t.id] = d;
        d
    });
    let tasks = graph
        .tasks()
        .iter()
        .map(|t| {
            let p = observed[t.id];
            TaskReport {
                id: t.id,
                kind: t.kind,
                partition: t.partition,
                pool: p.pool,
                worker: p.worker,
                start_s: p.start,
                end_s: p.end,
                wall_s: base[t.id],
                modeled_s: modeled_d[t.id],
                modeled_overhead_s: modeled_d[t.id] - base[t.id],
            }
        })
        .collect();
    RunReport {
        partitions: graph.partitions(),
        reads: 0,
        tasks,
        total_wall_s,
        total_modeled_s: makespan(&replay),
        critical_path_wall_s: critical_path(graph, &base),
        critical_path_modeled_s: critical_path(graph, &modeled_d),
    }
}

/// Runs a graph on simulated time: `base_time` gives each task's unmodeled
/// duration.
pub fn simulate<E>(
    graph: &TaskGraph,
    opts: &ExecOptions,
    base_time: impl Fn(&Task) -> f64,
) -> Result<RunReport, ExecError<E>> {
    opts.check(graph)?;
    let plain = list_schedule(graph, opts.secure_workers, opts.nonsecure_workers, |t, _| base_time(t));
    Ok(assemble(graph, opts, &plain, makespan(&plain)))
}

enum Outcome<E> {
    Ok,
    Failed(E),
    Panicked(String),
}

struct Done<E> {
    id: TaskId,
    placement: Placement,
    outcome: Outcome<E>,
}

/// Runs every task on real threads: one bounded pool of secure workers, one
/// of non-secure workers. Worker threads are named `secure-<n>` and
/// `nonsecure-<n>`. A task starts once its dependencies finished; the
/// first failure stops new dispatches and cancels everything not yet started.
pub fn execute<E, F>(graph: &TaskGraph, opts: &ExecOptions, run: F) -> Result<RunReport, ExecError<E>>
where
    E: Send,
    F: Fn(&Task) -> Result<(), E> + Sync,
{
    opts.check(graph)?;
    let n = graph.len();
    let dependents = graph.dependents();
    let mut waiting: Vec<usize> = graph.tasks().iter().map(|t| t.deps.len()).collect();
    let mut rng = opts.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let clock = Instant::now();

    let (secure_tx, secure_rx) = unbounded::<TaskId>();
    let (plain_tx, plain_rx) = unbounded::<TaskId>();
    let (done_tx, done_rx) = unbounded::<Done<E>>();

    std::thread::scope(|scope| {
        for (pool, rx, count) in [
            (Pool::Secure, &secure_rx, opts.secure_workers),
            (Pool::NonSecure, &plain_rx, opts.nonsecure_workers),
        ] {
            for worker in 0..count {
                let rx = rx.clone();
                let done_tx = done_tx.clone();
                let run = &run;
                let name = format!("{}-{worker}", pool.name());
                let spawned = std::thread::Builder::new().name(name).spawn_scoped(scope, move || {
                    for id in rx.iter() {
                        let task = &graph.tasks()[id];
                        let start = clock.elapsed().as_secs_f64();
                        let outcome = match catch_unwind(AssertUnwindSafe(|| run(task))) {
                            Ok(Ok(())) => Outcome::Ok,
                            Ok(Err(e)) => Outcome::Failed(e),
                            Err(payload) => Outcome::Panicked(
                                payload
                                    .downcast_ref::<&str>()
                                    .map(|s| s.to_string())
                                    .or_else(|| payload.downcast_ref::<String>().cloned())
                                    .unwrap_or_else(|| "unknown panic".into()),
                            ),
                        };
                        let end = clock.elapsed().as_secs_f64();
                        let placement = Placement { pool, worker, start, end };
                        if done_tx.send(Done { id, placement, outcome }).is_err() {
                            break;
                        }
                    }
                });
                spawned.expect("failed to spawn worker thread");
            }
        }
        drop(done_tx);

        let mut ready: Vec<TaskId> = (0..n).filter(|&i| waiting[i] == 0).collect();
        let mut observed: Vec<Option<Placement>> = vec![None; n];
        let mut in_flight = 0usize;
        let mut failure: Option<ExecError<E>> = None;
        loop {
            if failure.is_none() {
                if let Some(rng) = rng.as_mut() {
                    ready.shuffle(rng);
                }
                for id in ready.drain(..) {
                    let tx = if graph.tasks()[id].requires_secure { &secure_tx } else { &plain_tx };
                    tx.send(id).expect("workers outlive the driver loop");
                    in_flight += 1;
                }
            }
            if in_flight == 0 {
                break;
            }
            let done = done_rx.recv().expect("a worker holds the sender while tasks are in flight");
            in_flight -= 1;
            observed[done.id] = Some(done.placement);
            let task = &graph.tasks()[done.id];
            match done.outcome {
                Outcome::Ok => {
                    for &d in &dependents[done.id] {
                        waiting[d] -= 1;
                        if waiting[d] == 0 {
                            ready.push(d);
                        }
                    }
                }
                Outcome::Failed(e) => {
                    log::error!("task {} failed", task.label());
                    if failure.is_none() {
                        failure = Some(ExecError::Task {
                            id: task.id,
                            kind: task.kind,
                            partition: task.partition,
                            cancelled: 0,
                            source: e,
                        });
                    }
                }
                Outcome::Panicked(message) => {
                    if failure.is_none() {
                        failure = Some(ExecError::Panicked {
                            id: task.id,
                            kind: task.kind,
                            message,
                        });
                    }
                }
            }
        }
        drop(secure_tx);
        drop(plain_tx);
        let total = clock.elapsed().as_secs_f64();

        if let Some(mut err) = failure {
            if let ExecError::Task { cancelled, .. } = &mut err {
                *cancelled = observed.iter().filter(|p| p.is_none()).count();
            }
            return Err(err);
        }
        let observed: Vec<Placement> = observed.into_iter().map(|p| p.expect("all tasks ran")).collect();
        Ok(assemble(graph, opts, &observed, total))
    })
}

#[cfg(test)]
mod tests {
    use super::super::graph::{build_task_graph, CacheState};
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    use std::time::Duration;

    fn unit(_: &Task) -> f64 {
        1.0
    }

    #[test]
    fn wide_pool_runs_stage_concurrently() {
        let g = build_task_graph(80, CacheState::all_cached());
        let r = simulate::<()>(&g, &ExecOptions::new(80, 1), unit).unwrap();
        let aligns: Vec<_> = r.tasks.iter().filter(|t| t.kind == TaskKind::Align).collect();
        assert!(aligns.iter().all(|t| t.start_s == aligns[0].start_s));
        assert_eq!(r.total_wall_s, 3.0);
        assert_eq!(r.total_wall_s, r.critical_path_wall_s);
    }

    #[test]
    fn single_worker_serializes() {
        let g = build_task_graph(80, CacheState::all_cached());
        let r = simulate::<()>(&g, &ExecOptions::new(1, 1), unit).unwrap();
        assert_eq!(r.total_wall_s, 161.0);
        assert!(r.total_wall_s >= r.critical_path_wall_s);
    }

    #[test]
    fn init_charged_once_per_worker() {
        let g = build_task_graph(4, CacheState::all_cached());
        let mut opts = ExecOptions::new(2, 1);
        opts.profile = Some(EnclaveProfile::default());
        let r = simulate::<()>(&g, &opts, |_| 0.0).unwrap();
        let inits = r.tasks.iter().filter(|t| t.modeled_s == 40.96).count();
        assert_eq!(inits, 2);
        assert!(r.tasks.iter().all(|t| t.modeled_s == 0.0 || t.modeled_s == 40.96));
    }

    #[test]
    fn missing_pool_rejected() {
        let g = build_task_graph(2, CacheState::default());
        let err = simulate::<()>(&g, &ExecOptions::new(1, 0), unit).unwrap_err();
        assert!(matches!(err, ExecError::NoWorkers(Pool::NonSecure)));
        let err = execute(&g, &ExecOptions::new(0, 1), |_| Ok::<(), ()>(())).unwrap_err();
        assert!(matches!(err, ExecError::NoWorkers(Pool::Secure)));
        // only secure tasks: zero non-secure workers is fine
        let g = build_task_graph(2, CacheState::all_cached());
        assert!(execute(&g, &ExecOptions::new(1, 0), |_| Ok::<(), ()>(())).is_ok());
    }

    #[test]
    fn real_execution_respects_order_and_placement() {
        let g = build_task_graph(6, CacheState::default());
        let finished = Mutex::new(vec![false; g.len()]);
        let mut opts = ExecOptions::new(3, 2);
        opts.shuffle_seed = Some(7);
        let r = execute(&g, &opts, |t| {
            let f = finished.lock().unwrap();
            assert!(t.deps.iter().all(|&d| f[d]), "{} started early", t.label());
            drop(f);
            std::thread::sleep(Duration::from_millis(1));
            finished.lock().unwrap()[t.id] = true;
            Ok::<(), ()>(())
        })
        .unwrap();
        assert_eq!(r.tasks.len(), g.len());
        for t in &r.tasks {
            assert_eq!(t.pool == Pool::Secure, t.kind.requires_secure());
        }
        assert!(r.total_wall_s >= r.critical_path_wall_s);
    }

    #[test]
    fn failure_cancels_dependents() {
        let g = build_task_graph(4, CacheState::all_cached());
        let ran = AtomicUsize::new(0);
        let err = execute(&g, &ExecOptions::new(1, 1), |t| {
            ran.fetch_add(1, Ordering::SeqCst);
            if t.kind == TaskKind::Dispatch && t.partition == Some(1) {
                Err("boom")
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        match err {
            ExecError::Task {
                kind,
                partition,
                cancelled,
                source,
                ..
            } => {
                assert_eq!((kind, partition, source), (TaskKind::Dispatch, Some(1), "boom"));
                assert_eq!(cancelled + ran.load(Ordering::SeqCst), g.len());
                assert!(cancelled >= 2, "align[1] and merge never run");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn panics_are_reported() {
        let g = build_task_graph(1, CacheState::all_cached());
        let err = execute(&g, &ExecOptions::new(1, 1), |t| {
            if t.kind == TaskKind::Align {
                panic!("kaput");
            }
            Ok::<(), ()>(())
        })
        .unwrap_err();
        assert!(matches!(err, ExecError::Panicked { kind: TaskKind::Align, .. }));
    }
}
