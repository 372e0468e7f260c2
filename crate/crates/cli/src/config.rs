//! Flat key-value run configuration.
//!
//! The format is one `key = value` per line with `#` comments, chosen for
//! diff-friendliness. Unknown and duplicate keys are errors.

use std::collections::HashSet;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};

use cpg_core::experiment::{DerivedGoal, ExperimentConfig, GoalPlan};
use cpg_core::mask::PickMode;
use cpg_core::prune::PruneSchedule;
use cpg_core::session::Hyper;
use cpg_core::GrowthPolicy;

/// Where the run's tasks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic {
        tasks: usize,
        classes_per_task: usize,
        dim: usize,
        per_class: usize,
        sep: f32,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
        classes: usize,
        classes_per_task: usize,
    },
    Csv {
        path: PathBuf,
        classes_per_task: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub data: DataSpec,
    pub task_order_seed: u64,
    pub experiment: ExperimentConfig,
    pub out_report: Option<PathBuf>,
    pub out_checkpoint: Option<PathBuf>,
}

#[derive(Default)]
struct Raw {
    seen: HashSet<String>,
    entries: Vec<(String, String, usize)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }
}

fn parse_lines(text: &str) -> Result<Raw> {
    let mut raw = Raw::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected 'key = value'", lineno + 1))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            bail!("line {}: empty key or value", lineno + 1);
        }
        if !raw.seen.insert(key.clone()) {
            bail!("line {}: duplicate key '{key}'", lineno + 1);
        }
        raw.entries.push((key, value, lineno + 1));
    }
    Ok(raw)
}

fn parse<T: std::str::FromStr>(raw: &Raw, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match raw.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|e| anyhow!("key '{key}': bad value '{v}' ({e})")),
    }
}

fn require<T: std::str::FromStr>(raw: &Raw, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v = raw
        .get(key)
        .ok_or_else(|| anyhow!("missing required key '{key}'"))?;
    v.parse()
        .map_err(|e| anyhow!("key '{key}': bad value '{v}' ({e})"))
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| anyhow!("key '{key}': bad entry '{s}' ({e})"))
        })
        .collect()
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "data",
    "synthetic.tasks",
    "synthetic.classes_per_task",
    "synthetic.dim",
    "synthetic.per_class",
    "synthetic.sep",
    "idx.train_images",
    "idx.train_labels",
    "idx.test_images",
    "idx.test_labels",
    "idx.classes",
    "csv.path",
    "classes_per_task",
    "task_order_seed",
    "hidden",
    "goal_mode",
    "goal",
    "goals",
    "baseline_runs",
    "top_delta",
    "prune.step_fraction",
    "prune.retrain_epochs",
    "prune.min_remaining",
    "growth.increment_fraction",
    "growth.max_expansion",
    "growth.max_retries",
    "growth.reset_free_on_grow",
    "lr",
    "lr_mask",
    "momentum",
    "epochs",
    "batch_size",
    "mask.threshold",
    "mask.init",
    "pick_mode",
    "out.report",
    "out.checkpoint",
];

/// Parses a run configuration. `CPG_SEED` in the environment overrides the
/// configured seed.
pub fn parse_run_spec(text: &str) -> Result<RunSpec> {
    let raw = parse_lines(text)?;
    for (key, _, lineno) in &raw.entries {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("line {lineno}: unknown key '{key}'");
        }
    }

    let mut seed: u64 = parse(&raw, "seed", 0)?;
    if let Ok(env_seed) = std::env::var("CPG_SEED") {
        seed = env_seed
            .parse()
            .context("CPG_SEED must be an unsigned integer")?;
    }

    let data = match raw.get("data").unwrap_or("synthetic") {
        "synthetic" => DataSpec::Synthetic {
            tasks: parse(&raw, "synthetic.tasks", 6)?,
            classes_per_task: parse(&raw, "synthetic.classes_per_task", 3)?,
            dim: parse(&raw, "synthetic.dim", 16)?,
            per_class: parse(&raw, "synthetic.per_class", 60)?,
            sep: parse(&raw, "synthetic.sep", 6.0)?,
        },
        "idx" => {
            let test_images: Option<PathBuf> = raw.get("idx.test_images").map(PathBuf::from);
            let test_labels: Option<PathBuf> = raw.get("idx.test_labels").map(PathBuf::from);
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some((i, l)),
                (None, None) => None,
                _ => bail!("idx.test_images and idx.test_labels must be given together"),
            };
            DataSpec::Idx {
                train_images: require(&raw, "idx.train_images")?,
                train_labels: require(&raw, "idx.train_labels")?,
                test,
                classes: require(&raw, "idx.classes")?,
                classes_per_task: parse(&raw, "classes_per_task", 2)?,
            }
        }
        "csv" => DataSpec::Csv {
            path: require(&raw, "csv.path")?,
            classes_per_task: parse(&raw, "classes_per_task", 2)?,
        },
        other => bail!("key 'data': unknown source '{other}'"),
    };

    let hidden = match raw.get("hidden") {
        None => vec![64, 32],
        Some(v) => parse_list(v, "hidden")?,
    };

    let baseline_runs: usize = parse(&raw, "baseline_runs", 2)?;
    let top_delta: f32 = parse(&raw, "top_delta", 0.005)?;
    let goals = match raw.get("goal_mode").unwrap_or("explicit") {
        "explicit" => match raw.get("goals") {
            Some(list) => GoalPlan::PerTask(parse_list(list, "goals")?),
            None => GoalPlan::Explicit(parse(&raw, "goal", 0.9)?),
        },
        "avg" => GoalPlan::Derived {
            mode: DerivedGoal::Avg,
            baseline_runs,
        },
        "max" => GoalPlan::Derived {
            mode: DerivedGoal::Max,
            baseline_runs,
        },
        "top" => GoalPlan::Derived {
            mode: DerivedGoal::Top { delta: top_delta },
            baseline_runs,
        },
        other => bail!("key 'goal_mode': unknown mode '{other}'"),
    };

    let pick_mode = match raw.get("pick_mode").unwrap_or("learned") {
        "learned" => PickMode::Learned,
        "force_all" => PickMode::ForceAll,
        other => bail!("key 'pick_mode': unknown mode '{other}'"),
    };

    let defaults = Hyper::default();
    let experiment = ExperimentConfig {
        seed,
        hidden,
        goals,
        schedule: PruneSchedule {
            step_fraction: parse(&raw, "prune.step_fraction", 0.1)?,
            retrain_epochs: parse(&raw, "prune.retrain_epochs", 5)?,
            min_remaining: parse(&raw, "prune.min_remaining", 1)?,
        },
        policy: GrowthPolicy {
            increment_fraction: parse(&raw, "growth.increment_fraction", 0.1)?,
            max_expansion: parse(&raw, "growth.max_expansion", 1.5)?,
            max_retries: parse(&raw, "growth.max_retries", 3)?,
        },
        hyper: Hyper {
            lr: parse(&raw, "lr", defaults.lr)?,
            lr_mask: parse(&raw, "lr_mask", defaults.lr_mask)?,
            momentum: parse(&raw, "momentum", defaults.momentum)?,
            max_epochs: parse(&raw, "epochs", defaults.max_epochs)?,
            batch_size: parse(&raw, "batch_size", defaults.batch_size)?,
            mask_threshold: parse(&raw, "mask.threshold", defaults.mask_threshold)?,
            mask_init: parse(&raw, "mask.init", defaults.mask_init)?,
        },
        pick_mode,
        reset_free_on_grow: parse(&raw, "growth.reset_free_on_grow", false)?,
    };

    Ok(RunSpec {
        data,
        task_order_seed: parse(&raw, "task_order_seed", 0)?,
        experiment,
        out_report: raw.get("out.report").map(PathBuf::from),
        out_checkpoint: raw.get("out.checkpoint").map(PathBuf::from),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let spec = parse_run_spec("").unwrap();
        assert_eq!(spec.experiment.seed, 0);
        assert!(matches!(spec.data, DataSpec::Synthetic { tasks: 6, .. }));
        assert_eq!(spec.experiment.hidden, vec![64, 32]);
        assert!(matches!(spec.experiment.goals, GoalPlan::Explicit(g) if (g - 0.9).abs() < 1e-6));
    }

    #[test]
    fn full_config_parses() {
        let text = "\
# experiment
seed = 42
data = synthetic
synthetic.tasks = 4          # four tasks
synthetic.classes_per_task = 2
synthetic.dim = 8
synthetic.per_class = 30
synthetic.sep = 7.5
hidden = 12,6
goal_mode = top
top_delta = 0.01
baseline_runs = 3
lr = 0.05
epochs = 10
pick_mode = force_all
out.report = out/report.csv
";
        let spec = parse_run_spec(text).unwrap();
        assert_eq!(spec.experiment.seed, 42);
        assert_eq!(spec.experiment.hidden, vec![12, 6]);
        assert_eq!(spec.experiment.pick_mode, PickMode::ForceAll);
        assert_eq!(
            spec.experiment.goals,
            GoalPlan::Derived {
                mode: DerivedGoal::Top { delta: 0.01 },
                baseline_runs: 3
            }
        );
        assert_eq!(spec.out_report, Some(PathBuf::from("out/report.csv")));
        assert_eq!(spec.out_checkpoint, None);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse_run_spec("sed = 42\n").is_err());
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_run_spec("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(parse_run_spec("seed 42\n").is_err());
        assert!(parse_run_spec("seed =\n").is_err());
    }

    #[test]
    fn per_task_goals_parse_as_list() {
        let spec = parse_run_spec("goals = 0.9, 0.8, 0.7\n").unwrap();
        assert_eq!(
            spec.experiment.goals,
            GoalPlan::PerTask(vec![0.9, 0.8, 0.7])
        );
    }

    #[test]
    fn idx_requires_paired_test_files() {
        let text = "\
data = idx
idx.train_images = a.idx
idx.train_labels = b.idx
idx.classes = 10
idx.test_images = c.idx
";
        assert!(parse_run_spec(text).is_err());
    }
}
