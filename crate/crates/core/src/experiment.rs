//! Full sequential-experiment driver: builds the backbone, derives per-task
//! accuracy goals (explicit or from scratch baselines), runs the task loop,
//! and produces the final report rows.

use std::time::Instant;

use crate::controller::{set_accuracy_goal, CpgState, GoalMode, GrowthPolicy};
use crate::data::{TaskData, TaskSequence};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::mask::PickMode;
use crate::nn::{build_network, LayerSpec, Network};
use crate::prune::{AccuracyGoal, PruneSchedule};
use crate::report::{RunReport, TaskRow};
use crate::seeds::{mix, tag};
use crate::session::{Hyper, TaskSession};

/// How per-task accuracy goals are chosen for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum GoalPlan {
    /// One explicit goal for every task.
    Explicit(f32),
    /// An explicit goal per task, in presentation order.
    PerTask(Vec<f32>),
    /// Derived from `baseline_runs` from-scratch trainings per task.
    Derived { mode: DerivedGoal, baseline_runs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivedGoal {
    Avg,
    Max,
    Top { delta: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Hidden layer widths of the shared backbone.
    pub hidden: Vec<usize>,
    pub goals: GoalPlan,
    pub schedule: PruneSchedule,
    pub policy: GrowthPolicy,
    pub hyper: Hyper,
    pub pick_mode: PickMode,
    pub reset_free_on_grow: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: vec![64, 32],
            goals: GoalPlan::Explicit(0.9),
            schedule: PruneSchedule::default(),
            policy: GrowthPolicy::default(),
            hyper: Hyper::default(),
            pick_mode: PickMode::Learned,
            reset_free_on_grow: false,
        }
    }
}

/// Outcome of a full run. `rows` hold the end-of-run accuracy of every task
/// under its frozen view, in presentation order.
#[derive(Debug)]
pub struct RunOutcome {
    pub state: CpgState,
    pub report: RunReport,
    /// Scratch baseline accuracies per task, when the goal plan needed them.
    pub baselines: Option<Vec<Vec<f32>>>,
    pub growth_events: usize,
}

pub fn backbone_specs(input_dim: usize, hidden: &[usize]) -> Result<Vec<LayerSpec>> {
    if hidden.is_empty() {
        return Err(Error::InvalidConfig("at least one hidden layer required".into()));
    }
    let mut specs = Vec::with_capacity(hidden.len() * 2);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::dense(prev, h));
        specs.push(LayerSpec::relu(h));
        prev = h;
    }
    Ok(specs)
}

/// Trains an independent network on one task and returns the best evaluation
/// accuracy over the epoch budget. Used for goal derivation and comparisons.
pub fn scratch_accuracy(
    input_dim: usize,
    hidden: &[usize],
    task: &TaskData,
    hyper: &Hyper,
    seed: u64,
) -> Result<f32> {
    let net: Network = build_network(backbone_specs(input_dim, hidden)?, seed)?;
    let ledger = Ledger::new(net.n_params())?;
    let mut sess = TaskSession::new(
        &net,
        &ledger,
        1,
        task.classes(),
        mix(seed, &[tag::HEAD_INIT]),
        hyper,
        PickMode::Learned,
    )?;
    let mut best = 0.0f32;
    for epoch in 0..hyper.max_epochs {
        sess.train_epoch(
            &ledger,
            &task.train,
            hyper,
            mix(seed, &[tag::TRAIN_EPOCH, epoch as u64]),
            false,
        )?;
        let acc = sess.evaluate(&ledger, &task.eval)?;
        if acc > best {
            best = acc;
        }
    }
    Ok(best)
}

fn goal_for_task(
    cfg: &ExperimentConfig,
    baselines: Option<&Vec<Vec<f32>>>,
    t: usize,
) -> Result<AccuracyGoal> {
    match &cfg.goals {
        GoalPlan::Explicit(v) => AccuracyGoal::explicit(*v),
        GoalPlan::PerTask(vs) => {
            let v = vs.get(t).copied().ok_or_else(|| {
                Error::InvalidConfig(format!("no goal configured for task {}", t + 1))
            })?;
            AccuracyGoal::explicit(v)
        }
        GoalPlan::Derived { mode, .. } => {
            let b = &baselines.expect("baselines computed for derived goals")[t];
            let goal_mode = match mode {
                DerivedGoal::Avg => GoalMode::Avg,
                DerivedGoal::Max => GoalMode::Max,
                DerivedGoal::Top { delta } => GoalMode::Top { delta: *delta },
            };
            set_accuracy_goal(goal_mode, b)
        }
    }
}

/// Runs the whole task sequence through the engine and reports end-of-run
/// accuracies under each task's frozen view.
pub fn run_experiment(cfg: &ExperimentConfig, tasks: &TaskSequence) -> Result<RunOutcome> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("task sequence is empty".into()));
    }
    let input_dim = tasks.tasks[0].train.feature_dim();
    for (t, task) in tasks.tasks.iter().enumerate() {
        if task.train.feature_dim() != input_dim || task.eval.feature_dim() != input_dim {
            return Err(Error::Data(format!(
                "task {} feature width differs from task 1",
                t + 1
            )));
        }
    }
    let started = Instant::now();

    let baselines = match &cfg.goals {
        GoalPlan::Derived { baseline_runs, .. } => {
            if *baseline_runs == 0 {
                return Err(Error::InvalidConfig("baseline_runs must be at least 1".into()));
            }
            let mut all = Vec::with_capacity(tasks.len());
            for (t, task) in tasks.tasks.iter().enumerate() {
                let mut accs = Vec::with_capacity(*baseline_runs);
                for r in 0..*baseline_runs {
                    accs.push(scratch_accuracy(
                        input_dim,
                        &cfg.hidden,
                        task,
                        &cfg.hyper,
                        mix(cfg.seed, &[tag::BASELINE, t as u64, r as u64]),
                    )?);
                }
                all.push(accs);
            }
            Some(all)
        }
        _ => None,
    };

    let net = build_network(
        backbone_specs(input_dim, &cfg.hidden)?,
        mix(cfg.seed, &[tag::NET_INIT]),
    )?;
    let mut state = CpgState::new(
        net,
        cfg.policy,
        cfg.seed,
        cfg.pick_mode,
        cfg.reset_free_on_grow,
    )?;

    for (t, task) in tasks.tasks.iter().enumerate() {
        let goal = goal_for_task(cfg, baselines.as_ref(), t)?;
        if t == 0 {
            state.learn_first_task(task, goal, &cfg.schedule, &cfg.hyper)?;
        } else {
            state.learn_next_task(task, goal, &cfg.schedule, &cfg.hyper)?;
        }
    }

    let mut rows = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.tasks.iter().enumerate() {
        let task_id = (t + 1) as u16;
        let record = &state.tasks()[t];
        rows.push(TaskRow {
            task_id,
            accuracy: state.evaluate(task_id, &task.eval)?,
            goal: record.goal.value,
            best_effort: record.best_effort,
        });
    }
    let mut report = RunReport::from_rows(
        rows,
        state.net().n_params(),
        state.n0(),
        state.ledger().free_count(),
    )?;
    report.wall_secs = started.elapsed().as_secs_f64();
    let growth_events = state.growth_events();
    Ok(RunOutcome {
        state,
        report,
        baselines,
        growth_events,
    })
}
