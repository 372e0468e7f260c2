//! Command implementations for the `cpg` binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 run
//! completed but at least one task committed below its goal (best effort).

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use cpg_core::checkpoint::{load_checkpoint, save_checkpoint};
use cpg_core::controller::CpgState;
use cpg_core::data::{gen_synthetic_tasks, load_csv, load_idx, split_by_class, Dataset, TaskSequence};
use cpg_core::experiment::run_experiment;
use cpg_core::nn::LayerKind;
use cpg_core::prune::GoalSource;
use cpg_core::report::{emit_report, size_report, TaskRow};

pub mod config;

use config::{DataSpec, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BEST_EFFORT: i32 = 4;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub source: anyhow::Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        source: e.into(),
    }
}

fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_DATA,
        source: e.into(),
    }
}

fn run_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        source: e.into(),
    }
}

/// Builds the task sequence a run spec describes.
pub fn build_tasks(spec: &RunSpec) -> CliResult<TaskSequence> {
    let seq = match &spec.data {
        DataSpec::Synthetic {
            tasks,
            classes_per_task,
            dim,
            per_class,
            sep,
        } => gen_synthetic_tasks(
            *tasks,
            *classes_per_task,
            *dim,
            *per_class,
            *sep,
            spec.experiment.seed,
        )
        .map_err(data_err)?
        .reordered(spec.task_order_seed),
        DataSpec::Idx {
            train_images,
            train_labels,
            test,
            classes,
            classes_per_task,
        } => {
            let train = load_idx(train_images, train_labels, *classes).map_err(data_err)?;
            let eval = match test {
                Some((ti, tl)) => Some(load_idx(ti, tl, *classes).map_err(data_err)?),
                None => None,
            };
            split_by_class(&train, eval.as_ref(), *classes_per_task, spec.task_order_seed)
                .map_err(data_err)?
        }
        DataSpec::Csv {
            path,
            classes_per_task,
        } => {
            let ds = load_csv(path).map_err(data_err)?;
            split_by_class(&ds, None, *classes_per_task, spec.task_order_seed)
                .map_err(data_err)?
        }
    };
    Ok(seq)
}

/// Runs the full sequential experiment a config file describes.
pub fn cmd_run(config_path: &Path, out: &mut impl Write) -> CliResult<i32> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read config {}", config_path.display()))
        .map_err(config_err)?;
    let spec = config::parse_run_spec(&text).map_err(config_err)?;
    let tasks = build_tasks(&spec)?;

    let outcome = run_experiment(&spec.experiment, &tasks).map_err(run_err)?;
    let state = &outcome.state;

    if let Some(baselines) = &outcome.baselines {
        for (t, accs) in baselines.iter().enumerate() {
            let rendered: Vec<String> =
                accs.iter().map(|a| format!("{:.1}%", a * 100.0)).collect();
            writeln!(out, "baseline task {}: {}", t + 1, rendered.join(" ")).map_err(run_err)?;
        }
    }
    for (row, record) in outcome.report.rows.iter().zip(state.tasks()) {
        writeln!(
            out,
            "task {}/{}: accuracy {:.1}% (goal {:.1}%){} owned {} free {} exp {:.2}",
            row.task_id,
            outcome.report.rows.len(),
            row.accuracy as f64 * 100.0,
            row.goal as f64 * 100.0,
            if row.best_effort { " [best effort]" } else { "" },
            record.owned_count,
            state.ledger().free_count(),
            state.expansion_ratio(),
        )
        .map_err(run_err)?;
    }
    writeln!(
        out,
        "avg {:.1}% exp {:.2} red {:.2} growth_events {} wall {:.1}s",
        outcome.report.average * 100.0,
        outcome.report.expansion,
        outcome.report.redundancy,
        outcome.growth_events,
        outcome.report.wall_secs,
    )
    .map_err(run_err)?;

    if let Some(path) = &spec.out_report {
        emit_report(
            &outcome.report.rows,
            state.net().n_params(),
            state.n0(),
            state.ledger().free_count(),
            path,
        )
        .map_err(run_err)?;
        writeln!(out, "report written to {}", path.display()).map_err(run_err)?;
    }
    if let Some(path) = &spec.out_checkpoint {
        save_checkpoint(state, path).map_err(run_err)?;
        writeln!(out, "checkpoint written to {}", path.display()).map_err(run_err)?;
    }

    let flagged = outcome.report.rows.iter().any(|r| r.best_effort);
    Ok(if flagged { EXIT_BEST_EFFORT } else { EXIT_OK })
}

/// Evaluation data for `cpg eval`: a CSV file, or an IDX image/label pair.
pub enum EvalData {
    Csv(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
}

fn load_eval_dataset(data: &EvalData, classes: usize) -> CliResult<Dataset> {
    match data {
        EvalData::Csv(path) => {
            let ds = load_csv(path).map_err(data_err)?;
            if ds.n_classes() > classes {
                return Err(data_err(anyhow!(
                    "dataset has {} classes but the task head has {classes}",
                    ds.n_classes()
                )));
            }
            Ok(ds)
        }
        EvalData::Idx { images, labels } => load_idx(images, labels, classes).map_err(data_err),
    }
}

/// Evaluates one committed task from a checkpoint on external data.
pub fn cmd_eval(
    checkpoint: &Path,
    task: u16,
    data: &EvalData,
    out: &mut impl Write,
) -> CliResult<i32> {
    let state = load_checkpoint(checkpoint).map_err(data_err)?;
    let record = state
        .tasks()
        .iter()
        .find(|r| r.task_id == task)
        .ok_or_else(|| {
            config_err(anyhow!(
                "task {task} not in checkpoint (has {} tasks)",
                state.tasks().len()
            ))
        })?;
    let dataset = load_eval_dataset(data, record.head.classes)?;
    let accuracy = state.evaluate(task, &dataset).map_err(data_err)?;
    writeln!(
        out,
        "task {task}: accuracy {:.4} ({:.1}%) on {} samples",
        accuracy,
        accuracy as f64 * 100.0,
        dataset.n_samples()
    )
    .map_err(run_err)?;
    Ok(EXIT_OK)
}

/// Re-emits the run report CSV recorded in a checkpoint.
pub fn cmd_report(checkpoint: &Path, out_path: &Path, out: &mut impl Write) -> CliResult<i32> {
    let state = load_checkpoint(checkpoint).map_err(data_err)?;
    if state.tasks().is_empty() {
        return Err(data_err(anyhow!("checkpoint has no committed tasks")));
    }
    let rows: Vec<TaskRow> = state
        .tasks()
        .iter()
        .map(|r| TaskRow {
            task_id: r.task_id,
            accuracy: r.achieved,
            goal: r.goal.value,
            best_effort: r.best_effort,
        })
        .collect();
    emit_report(
        &rows,
        state.net().n_params(),
        state.n0(),
        state.ledger().free_count(),
        out_path,
    )
    .map_err(run_err)?;
    writeln!(out, "report written to {}", out_path.display()).map_err(run_err)?;
    Ok(EXIT_OK)
}

fn source_name(source: GoalSource) -> &'static str {
    match source {
        GoalSource::Explicit => "explicit",
        GoalSource::Avg => "avg",
        GoalSource::Max => "max",
        GoalSource::Top => "top",
    }
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Dense => "dense",
        LayerKind::Relu => "relu",
        LayerKind::Head => "head",
    }
}

/// Prints ledger, mask, and size statistics for a checkpoint.
pub fn cmd_inspect(checkpoint: &Path, out: &mut impl Write) -> CliResult<i32> {
    let state: CpgState = load_checkpoint(checkpoint).map_err(data_err)?;
    let mut write = || -> std::io::Result<()> {
        let layers: Vec<String> = state
            .net()
            .specs()
            .iter()
            .map(|s| format!("{} {}->{}", kind_name(s.kind), s.in_width, s.out_width))
            .collect();
        writeln!(out, "seed: {}", state.run_seed())?;
        writeln!(out, "layers: {}", layers.join(", "))?;
        writeln!(
            out,
            "params: {} (n0 {}, exp {:.2}x, red {:.2}x, free {})",
            state.net().n_params(),
            state.n0(),
            state.expansion_ratio(),
            state.redundancy_ratio(),
            state.ledger().free_count(),
        )?;
        writeln!(out, "committed tasks: {}", state.ledger().committed_tasks())?;
        for r in state.tasks() {
            writeln!(
                out,
                "task {}: owned {}, goal {:.1}% ({}), achieved {:.1}%, picked {}/{} prior weights, head {}->{}{}",
                r.task_id,
                r.owned_count,
                r.goal.value as f64 * 100.0,
                source_name(r.goal.source),
                r.achieved as f64 * 100.0,
                r.mask.popcount(),
                r.mask.len(),
                r.head.in_width,
                r.head.classes,
                if r.best_effort { " [best effort]" } else { "" },
            )?;
        }
        let sizes = size_report(&state);
        writeln!(
            out,
            "bytes: backbone {} + heads {} + masks {} + ledger {} + normalization {} = {}",
            sizes.backbone,
            sizes.heads,
            sizes.masks,
            sizes.ledger,
            sizes.normalization,
            sizes.total(),
        )?;
        Ok(())
    };
    write().map_err(run_err)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_then_eval_report_inspect() {
        let dir = tempfile::tempdir().unwrap();
        let report = dir.path().join("report.csv");
        let ckpt = dir.path().join("run.cpg");
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(
            &cfg_path,
            format!(
                "seed = 9\n\
                 data = synthetic\n\
                 synthetic.tasks = 2\n\
                 synthetic.classes_per_task = 2\n\
                 synthetic.dim = 8\n\
                 synthetic.per_class = 30\n\
                 synthetic.sep = 8.0\n\
                 hidden = 10\n\
                 goal = 0.9\n\
                 lr = 0.05\n\
                 epochs = 20\n\
                 out.report = {}\n\
                 out.checkpoint = {}\n",
                report.display(),
                ckpt.display()
            ),
        )
        .unwrap();
        let mut out = Vec::new();
        let code = cmd_run(&cfg_path, &mut out).unwrap();
        assert_eq!(code, EXIT_OK);
        let stdout = String::from_utf8(out).unwrap();
        assert!(stdout.contains("task 1/2"), "stdout: {stdout}");
        assert!(report.exists() && ckpt.exists());

        let mut out = Vec::new();
        assert_eq!(cmd_inspect(&ckpt, &mut out).unwrap(), EXIT_OK);
        let inspect = String::from_utf8(out).unwrap();
        assert!(inspect.contains("committed tasks: 2"), "{inspect}");

        let report2 = dir.path().join("report2.csv");
        let mut out = Vec::new();
        assert_eq!(cmd_report(&ckpt, &report2, &mut out).unwrap(), EXIT_OK);
        assert!(report2.exists());

        // Unknown task id is a usage error.
        let err = cmd_eval(
            &ckpt,
            7,
            &EvalData::Csv(dir.path().join("none.csv")),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let err = cmd_run(Path::new("/nonexistent.cfg"), &mut Vec::new()).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    #[test]
    fn bad_checkpoint_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cpg");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        let err = cmd_inspect(&path, &mut Vec::new()).unwrap_err();
        assert_eq!(err.code, EXIT_DATA);
    }
}
