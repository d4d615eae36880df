use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub type TaskId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Partition,
    Index,
    BloomBuild,
    Dispatch,
    Align,
    Merge,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Partition,
        TaskKind::Index,
        TaskKind::BloomBuild,
        TaskKind::Dispatch,
        TaskKind::Align,
        TaskKind::Merge,
    ];

    /// Stages that touch reads run in the secure pool; reference preparation
    /// does not.
    pub fn requires_secure(self) -> bool {
        matches!(self, TaskKind::Dispatch | TaskKind::Align | TaskKind::Merge)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Partition => "partition",
            TaskKind::Index => "index",
            TaskKind::BloomBuild => "bloom_build",
            TaskKind::Dispatch => "dispatch",
            TaskKind::Align => "align",
            TaskKind::Merge => "merge",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub partition: Option<u32>,
    pub requires_secure: bool,
    pub deps: Vec<TaskId>,
    pub declared_working_set: u64,
    pub ecalls: u64,
    pub ocalls: u64,
}

impl Task {
    pub fn working_set_mb(&self) -> f64 {
        self.declared_working_set as f64 / (1024.0 * 1024.0)
    }

    pub fn label(&self) -> String {
        match self.partition {
            Some(p) => format!("{}[{p}]", self.kind),
            None => self.kind.to_string(),
        }
    }
}

/// Which reference artifacts are already on disk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheState {
    pub partitions: bool,
    pub index: bool,
    pub bloom: bool,
}

impl CacheState {
    pub fn all_cached() -> Self {
        Self {
            partitions: true,
            index: true,
            bloom: true,
        }
    }
}

/// Tasks in topological order: every dependency has a smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    partitions: usize,
}

impl TaskGraph {
    pub fn from_tasks(tasks: Vec<Task>, partitions: usize) -> Result<Self, String> {
        for (i, t) in tasks.iter().enumerate() {
            if t.id != i {
                return Err(format!("task at slot {i} has id {}", t.id));
            }
            if let Some(&d) = t.deps.iter().find(|&&d| d >= i) {
                return Err(format!("task {i} depends on later task {d}"));
            }
            if t.requires_secure != t.kind.requires_secure() {
                return Err(format!("task {i} ({}) has wrong placement class", t.kind));
            }
        }
        Ok(Self { tasks, partitions })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn tasks_mut(&mut self) -> &mut [Task] {
        &mut self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn find(&self, kind: TaskKind, partition: Option<u32>) -> Option<&Task> {
        self.tasks.iter().find(|t| t.kind == kind && t.partition == partition)
    }

    pub fn dependents(&self) -> Vec<Vec<TaskId>> {
        let mut out = vec![Vec::new(); self.tasks.len()];
        for t in &self.tasks {
            for &d in &t.deps {
                out[d].push(t.id);
            }
        }
        out
    }

    pub fn needs_pool(&self, secure: bool) -> bool {
        self.tasks.iter().any(|t| t.requires_secure == secure)
    }
}

/// Builds the pipeline DAG for `p` partitions. Preparation tasks appear
/// only for artifacts missing from `cache`.
///
/// # Panics
/// If `p == 0`.
pub fn build_task_graph(p: usize, cache: CacheState) -> TaskGraph {
    assert!(p >= 1, "at least one partition is required");
    let mut tasks: Vec<Task> = Vec::new();
    let mut add = |kind: TaskKind, partition: Option<u32>, deps: Vec<TaskId>| -> TaskId {
        let id = tasks.len();
        tasks.push(Task {
            id,
            kind,
            partition,
            requires_secure: kind.requires_secure(),
            deps,
            declared_working_set: 0,
            ecalls: 0,
            ocalls: 0,
        });
        id
    };

    let part = (!cache.partitions).then(|| add(TaskKind::Partition, None, vec![]));
    let prep_deps: Vec<TaskId> = part.into_iter().collect();
    let index: Vec<Option<TaskId>> = (0..p)
        .map(|i| (!cache.index).then(|| add(TaskKind::Index, Some(i as u32), prep_deps.clone())))
        .collect();
    let bloom = (!cache.bloom).then(|| add(TaskKind::BloomBuild, None, prep_deps.clone()));
    let dispatch: Vec<TaskId> = (0..p)
        .map(|i| add(TaskKind::Dispatch, Some(i as u32), bloom.into_iter().collect()))
        .collect();
    let align: Vec<TaskId> = (0..p)
        .map(|i| {
            let mut deps = vec![dispatch[i]];
            deps.extend(index[i]);
            add(TaskKind::Align, Some(i as u32), deps)
        })
        .collect();
    add(TaskKind::Merge, None, align);
    TaskGraph { tasks, partitions: p }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_partition_chain() {
        let g = build_task_graph(
            1,
            CacheState {
                partitions: true,
                index: true,
                bloom: false,
            },
        );
        let kinds: Vec<_> = g.tasks().iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [TaskKind::BloomBuild, TaskKind::Dispatch, TaskKind::Align, TaskKind::Merge]
        );
        for (i, t) in g.tasks().iter().enumerate().skip(1) {
            assert_eq!(t.deps, vec![i - 1]);
        }
    }

    #[test]
    fn merge_fan_in() {
        let g = build_task_graph(3, CacheState::default());
        let merge = g.find(TaskKind::Merge, None).unwrap();
        assert_eq!(merge.deps.len(), 3);
        assert!(merge.deps.iter().all(|&d| g.tasks()[d].kind == TaskKind::Align));
        // partition + 3 index + bloom + 3 dispatch + 3 align + merge
        assert_eq!(g.len(), 12);
        let align2 = g.find(TaskKind::Align, Some(2)).unwrap();
        let dep_kinds: Vec<_> = align2.deps.iter().map(|&d| g.tasks()[d].kind).collect();
        assert_eq!(dep_kinds, [TaskKind::Dispatch, TaskKind::Index]);
    }

    #[test]
    fn cached_artifacts_omitted() {
        let g = build_task_graph(4, CacheState::all_cached());
        assert!(g
            .tasks()
            .iter()
            .all(|t| !matches!(t.kind, TaskKind::Partition | TaskKind::Index | TaskKind::BloomBuild)));
        assert_eq!(g.len(), 9);
        assert!(!g.needs_pool(false));
    }

    #[test]
    fn placement_classes() {
        let g = build_task_graph(2, CacheState::default());
        for t in g.tasks() {
            let secure = matches!(t.kind, TaskKind::Dispatch | TaskKind::Align | TaskKind::Merge);
            assert_eq!(t.requires_secure, secure, "{}", t.label());
        }
        let mut tasks = g.tasks().to_vec();
        tasks[0].requires_secure = true;
        assert!(TaskGraph::from_tasks(tasks, 2).is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
    }
}
