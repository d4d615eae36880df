use std::io::{self, Write};

use serde::Serialize;

use super::graph::{TaskGraph, TaskId, TaskKind};
use super::Pool;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub id: TaskId,
    pub kind: TaskKind,
    pub partition: Option<u32>,
    pub pool: Pool,
    pub worker: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub wall_s: f64,
    pub modeled_s: f64,
    pub modeled_overhead_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStats {
    pub count: usize,
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    pub sum: f64,
}

impl StageStats {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut count = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            count += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (count > 0).then(|| Self {
            count,
            min,
            avg: sum / count as f64,
            max,
            sum,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub partitions: usize,
    pub reads: usize,
    pub tasks: Vec<TaskReport>,
    pub total_wall_s: f64,
    pub total_modeled_s: f64,
    pub critical_path_wall_s: f64,
    pub critical_path_modeled_s: f64,
}

/// Longest dependency chain of `durations` (indexed by task id).
pub fn critical_path(graph: &TaskGraph, durations: &[f64]) -> f64 {
    let mut finish = vec![0.0f64; graph.len()];
    for t in graph.tasks() {
        let ready = t.deps.iter().map(|&d| finish[d]).fold(0.0, f64::max);
        finish[t.id] = ready + durations[t.id];
    }
    finish.into_iter().fold(0.0, f64::max)
}

impl RunReport {
    pub fn task(&self, id: TaskId) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn stage_wall(&self, kind: TaskKind) -> Option<StageStats> {
        StageStats::of(self.tasks.iter().filter(|t| t.kind == kind).map(|t| t.wall_s))
    }

    pub fn stage_modeled(&self, kind: TaskKind) -> Option<StageStats> {
        StageStats::of(self.tasks.iter().filter(|t| t.kind == kind).map(|t| t.modeled_s))
    }

    /// Task rows, then one `all` rollup row per stage, then a `total` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "stage,partition,pool,wall_s,modeled_s,modeled_overhead_s,min_s,avg_s,max_s")?;
        let mut tasks: Vec<&TaskReport> = self.tasks.iter().collect();
        tasks.sort_by_key(|t| t.id);
        for t in tasks {
            let part = t.partition.map_or_else(|| "-".to_string(), |p| p.to_string());
            writeln!(
                w,
                "{},{part},{},{:.6},{:.6},{:.6},,,",
                t.kind,
                t.pool.name(),
                t.wall_s,
                t.modeled_s,
                t.modeled_overhead_s
            )?;
        }
        for kind in TaskKind::ALL {
            let Some(wall) = self.stage_wall(kind) else { continue };
            let modeled = self.stage_modeled(kind).expect("same task set");
            writeln!(
                w,
                "{kind},all,{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                if kind.requires_secure() { Pool::Secure.name() } else { Pool::NonSecure.name() },
                wall.sum,
                modeled.sum,
                modeled.sum - wall.sum,
                wall.min,
                wall.avg,
                wall.max
            )?;
        }
        writeln!(
            w,
            "total,all,-,{:.6},{:.6},{:.6},,,",
            self.total_wall_s,
            self.total_modeled_s,
            self.total_modeled_s - self.total_wall_s
        )
    }

    pub fn csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("CSV is ASCII")
    }
}
