//! Run reports in the experiment table layout, plus model-size accounting.

use std::io::Write;
use std::path::Path;

use crate::controller::CpgState;
use crate::error::{Error, Result};

/// One task row of a run report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRow {
    pub task_id: u16,
    /// Accuracy fraction in [0, 1].
    pub accuracy: f32,
    /// Goal fraction in [0, 1].
    pub goal: f32,
    pub best_effort: bool,
}

/// Report for a completed run: per-task accuracies, their average, and the
/// expansion and redundancy ratios. Wall time is informational and never
/// written into the CSV, which must be byte-deterministic.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<TaskRow>,
    pub average: f64,
    pub expansion: f64,
    pub redundancy: f64,
    pub wall_secs: f64,
}

impl RunReport {
    pub fn from_rows(
        rows: Vec<TaskRow>,
        n_params: usize,
        n0: usize,
        free_count: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("report needs at least one task".into()));
        }
        let average =
            rows.iter().map(|r| r.accuracy as f64).sum::<f64>() / rows.len() as f64;
        Ok(Self {
            rows,
            average,
            expansion: n_params as f64 / n0 as f64,
            redundancy: free_count as f64 / n0 as f64,
            wall_secs: 0.0,
        })
    }

    /// Renders the CSV: one row per task (accuracy and goal as percentages
    /// to one decimal), then a summary row with the average percentage and
    /// the expansion/redundancy ratios to two decimals.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("task,accuracy_pct,goal_pct,best_effort\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.1},{:.1},{}\n",
                row.task_id,
                row.accuracy as f64 * 100.0,
                row.goal as f64 * 100.0,
                u8::from(row.best_effort)
            ));
        }
        out.push_str("avg_pct,exp,red\n");
        out.push_str(&format!(
            "{:.1},{:.2},{:.2}\n",
            self.average * 100.0,
            self.expansion,
            self.redundancy
        ));
        out
    }
}

/// Builds the report and writes its CSV via a temp file plus rename.
pub fn emit_report(
    rows: &[TaskRow],
    n_params: usize,
    n0: usize,
    free_count: usize,
    path: impl AsRef<Path>,
) -> Result<RunReport> {
    let report = RunReport::from_rows(rows.to_vec(), n_params, n0, free_count)?;
    write_atomic(path.as_ref(), report.render_csv().as_bytes())?;
    Ok(report)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Byte counts for each piece of persisted model state: f32 backbone
/// parameters, f32 task heads, packed mask bits, and u16 owner tags.
/// Normalization layers are not part of this engine, so their overhead is
/// always zero; per-task affine behavior lives in the task heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeReport {
    pub backbone: u64,
    pub heads: u64,
    pub masks: u64,
    pub ledger: u64,
    pub normalization: u64,
}

impl SizeReport {
    pub fn total(&self) -> u64 {
        self.backbone + self.heads + self.masks + self.ledger + self.normalization
    }
}

pub fn size_report(state: &CpgState) -> SizeReport {
    let heads: u64 = state
        .tasks()
        .iter()
        .map(|t| 4 * t.head.param_count() as u64)
        .sum();
    let masks: u64 = state
        .tasks()
        .iter()
        .map(|t| t.mask.len().div_ceil(8) as u64)
        .sum();
    SizeReport {
        backbone: 4 * state.net().n_params() as u64,
        heads,
        masks,
        ledger: 2 * state.net().n_params() as u64,
        normalization: 0,
    }
}
