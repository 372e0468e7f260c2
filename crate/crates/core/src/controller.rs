//! End-to-end task orchestration: first-task training and compaction, then a
//! pick/(grow)/prune loop per subsequent task, under a global expansion bound.
//!
//! The headline contract is unforgetting: once a task commits, its
//! input-to-logit mapping is bit-identical for the rest of the run,
//! including across growth events and any number of later tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, TaskData};
use crate::error::{Error, Result};
use crate::ledger::{self, Ledger, FREE};
use crate::mask::{FrozenMask, PickMode};
use crate::nn::{self, LayerKind, Network};
use crate::prune::{gradual_prune, AccuracyGoal, GoalSource, PruneSchedule};
use crate::seeds::{mix, tag};
use crate::session::{HeadParams, Hyper, TaskSession};
use crate::tensor::Tensor;

/// How a task's accuracy goal is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalMode {
    Explicit(f32),
    /// Mean of the baseline accuracies.
    Avg,
    /// Maximum of the baseline accuracies.
    Max,
    /// Maximum of mean and max, plus a slight increment.
    Top { delta: f32 },
}

/// Derives an accuracy goal from baseline accuracies. Non-explicit modes
/// require at least one baseline. Results are clamped into `[0, 1]`.
pub fn set_accuracy_goal(mode: GoalMode, baselines: &[f32]) -> Result<AccuracyGoal> {
    if let GoalMode::Explicit(value) = mode {
        return AccuracyGoal::explicit(value);
    }
    if baselines.is_empty() {
        return Err(Error::InvalidConfig(
            "goal mode needs baseline accuracies".into(),
        ));
    }
    let mean = (baselines.iter().map(|&b| b as f64).sum::<f64>() / baselines.len() as f64) as f32;
    let max = baselines.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (value, source) = match mode {
        GoalMode::Explicit(_) => unreachable!(),
        GoalMode::Avg => (mean, GoalSource::Avg),
        GoalMode::Max => (max, GoalSource::Max),
        GoalMode::Top { delta } => (mean.max(max) + delta, GoalSource::Top),
    };
    Ok(AccuracyGoal {
        value: value.clamp(0.0, 1.0),
        source,
    })
}

/// Width expansion policy for growth retries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthPolicy {
    /// Fraction of each layer's current width added per retry, rounded up.
    pub increment_fraction: f32,
    /// Hard bound on `n_params / n0` for the whole run.
    pub max_expansion: f32,
    /// Growth retries allowed per task.
    pub max_retries: usize,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        Self {
            increment_fraction: 0.1,
            max_expansion: 1.5,
            max_retries: 3,
        }
    }
}

impl GrowthPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.increment_fraction.is_finite() && self.increment_fraction > 0.0) {
            return Err(Error::InvalidConfig(
                "growth increment fraction must be positive".into(),
            ));
        }
        if !(self.max_expansion.is_finite() && self.max_expansion >= 1.0) {
            return Err(Error::InvalidConfig("max expansion must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything recorded for a committed task. Immutable after commit.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub task_id: u16,
    pub mask: FrozenMask,
    pub head: HeadParams,
    pub goal: AccuracyGoal,
    pub achieved: f32,
    pub owned_count: usize,
    /// Set when the goal could not be reached within the growth bound and
    /// retry budget; the task committed at its best accuracy instead.
    pub best_effort: bool,
}

/// Shared parameter store, ownership ledger, per-task records, and growth
/// policy for one continual-learning run.
#[derive(Debug, Clone)]
pub struct CpgState {
    net: Network,
    ledger: Ledger,
    tasks: Vec<TaskRecord>,
    policy: GrowthPolicy,
    n0: usize,
    run_seed: u64,
    pick_mode: PickMode,
    /// Re-initialize all free weights on growth instead of warm-starting.
    reset_free_on_grow: bool,
    growth_events: usize,
}

impl CpgState {
    pub fn new(
        net: Network,
        policy: GrowthPolicy,
        run_seed: u64,
        pick_mode: PickMode,
        reset_free_on_grow: bool,
    ) -> Result<Self> {
        policy.validate()?;
        if net.specs().iter().any(|s| s.kind == LayerKind::Head) {
            return Err(Error::InvalidSpec(
                "backbone must not contain a head layer; heads are task-private".into(),
            ));
        }
        let ledger = Ledger::new(net.n_params())?;
        let n0 = net.n_params();
        Ok(Self {
            net,
            ledger,
            tasks: Vec::new(),
            policy,
            n0,
            run_seed,
            pick_mode,
            reset_free_on_grow,
            growth_events: 0,
        })
    }

    pub(crate) fn from_parts(
        net: Network,
        ledger: Ledger,
        tasks: Vec<TaskRecord>,
        policy: GrowthPolicy,
        n0: usize,
        run_seed: u64,
    ) -> Result<Self> {
        if ledger.len() != net.n_params() {
            return Err(Error::Format("ledger size does not match network".into()));
        }
        if ledger.committed_tasks() as usize != tasks.len() {
            return Err(Error::Format("task records do not match ledger".into()));
        }
        Ok(Self {
            net,
            ledger,
            tasks,
            policy,
            n0,
            run_seed,
            pick_mode: PickMode::Learned,
            reset_free_on_grow: false,
            growth_events: 0,
        })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn policy(&self) -> &GrowthPolicy {
        &self.policy
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn growth_events(&self) -> usize {
        self.growth_events
    }

    /// Total parameters over the initial parameter count.
    pub fn expansion_ratio(&self) -> f64 {
        self.net.n_params() as f64 / self.n0 as f64
    }

    /// Free parameters over the initial parameter count.
    pub fn redundancy_ratio(&self) -> f64 {
        self.ledger.free_count() as f64 / self.n0 as f64
    }

    fn validate_hyper(hyper: &Hyper) -> Result<()> {
        if !(hyper.lr.is_finite() && hyper.lr_mask.is_finite() && hyper.momentum.is_finite()) {
            return Err(Error::NonFinite("hyperparameters"));
        }
        if hyper.max_epochs == 0 || hyper.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epoch budget and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Trains task 1 from scratch to the goal, compacts it by gradual
    /// pruning, and commits the survivors. Fails if the goal is unreachable
    /// within the epoch budget; growth never applies to the first task.
    pub fn learn_first_task(
        &mut self,
        data: &TaskData,
        goal: AccuracyGoal,
        schedule: &PruneSchedule,
        hyper: &Hyper,
    ) -> Result<()> {
        if self.ledger.committed_tasks() != 0 {
            return Err(Error::TaskOrder {
                expected: self.ledger.committed_tasks() + 1,
                got: 1,
            });
        }
        Self::validate_hyper(hyper)?;
        schedule.validate()?;
        let mut sess = TaskSession::new(
            &self.net,
            &self.ledger,
            1,
            data.classes(),
            mix(self.run_seed, &[tag::HEAD_INIT, 1]),
            hyper,
            self.pick_mode,
        )?;
        let mut achieved = 0.0f32;
        for epoch in 0..hyper.max_epochs {
            sess.train_epoch(
                &self.ledger,
                &data.train,
                hyper,
                mix(self.run_seed, &[tag::TRAIN_EPOCH, 1, 0, epoch as u64]),
                false,
            )?;
            achieved = sess.evaluate(&self.ledger, &data.eval)?;
            if achieved >= goal.value {
                break;
            }
        }
        if achieved < goal.value {
            return Err(Error::GoalNotMet {
                goal: goal.value,
                achieved,
            });
        }
        self.compact_and_commit(sess, data, goal, goal.value, schedule, hyper, false)
    }

    /// Learns one more task: trains the picking mask and free weights with
    /// all owned weights fixed, grows the network when the goal is out of
    /// reach, then compacts and commits. If the goal stays unmet after the
    /// expansion bound and retry budget, the task commits at its best
    /// accuracy with `best_effort` set.
    pub fn learn_next_task(
        &mut self,
        data: &TaskData,
        goal: AccuracyGoal,
        schedule: &PruneSchedule,
        hyper: &Hyper,
    ) -> Result<()> {
        let k = self.ledger.committed_tasks() + 1;
        if k < 2 {
            return Err(Error::TaskOrder { expected: 1, got: 2 });
        }
        Self::validate_hyper(hyper)?;
        schedule.validate()?;
        let mut sess = TaskSession::new(
            &self.net,
            &self.ledger,
            k,
            data.classes(),
            mix(self.run_seed, &[tag::HEAD_INIT, k as u64]),
            hyper,
            self.pick_mode,
        )?;
        let mut attempt = 0usize;
        let mut best_effort = false;
        let mut achieved = 0.0f32;
        'training: loop {
            for epoch in 0..hyper.max_epochs {
                sess.train_epoch(
                    &self.ledger,
                    &data.train,
                    hyper,
                    mix(
                        self.run_seed,
                        &[tag::TRAIN_EPOCH, k as u64, attempt as u64, epoch as u64],
                    ),
                    true,
                )?;
                achieved = sess.evaluate(&self.ledger, &data.eval)?;
                if achieved >= goal.value {
                    break 'training;
                }
            }
            if attempt >= self.policy.max_retries
                || !self.grow_for_retry(&mut sess, k, attempt)?
            {
                best_effort = true;
                break;
            }
            attempt += 1;
        }
        // A best-effort commit still compacts, holding the accuracy it got.
        let goal_used = if best_effort {
            goal.value.min(achieved)
        } else {
            goal.value
        };
        self.compact_and_commit(sess, data, goal, goal_used, schedule, hyper, best_effort)
    }

    #[allow(clippy::too_many_arguments)]
    fn compact_and_commit(
        &mut self,
        mut sess: TaskSession,
        data: &TaskData,
        goal: AccuracyGoal,
        goal_used: f32,
        schedule: &PruneSchedule,
        hyper: &Hyper,
        best_effort: bool,
    ) -> Result<()> {
        let k = sess.task_id();
        let mask_bits = sess.freeze_mask();
        let outcome = gradual_prune(
            &mut sess,
            &self.ledger,
            data,
            goal_used,
            schedule,
            hyper,
            mix(self.run_seed, &[tag::PRUNE_EPOCH, k as u64]),
        )?;
        self.ledger.commit_task(k, &outcome.survivors)?;
        let head = sess.write_back(&mut self.net);
        self.tasks.push(TaskRecord {
            task_id: k,
            mask: FrozenMask::from_bits(mask_bits),
            head,
            goal,
            achieved: outcome.achieved,
            owned_count: outcome.survivors.len(),
            best_effort,
        });
        debug_assert!(self.expansion_ratio() <= self.policy.max_expansion as f64 + 1e-12);
        Ok(())
    }

    /// Plans per-layer width increments for one retry: `increment_fraction`
    /// of each layer's current width, rounded up, shrunk greedily until the
    /// added parameters fit under the expansion bound. Returns `None` when
    /// nothing fits.
    fn plan_growth(&self) -> Result<Option<Vec<usize>>> {
        let specs = self.net.specs();
        let max_params = (self.policy.max_expansion as f64 * self.n0 as f64).floor() as usize;
        let allowed = max_params.saturating_sub(self.net.n_params());
        if allowed == 0 {
            return Ok(None);
        }
        let mut added: Vec<usize> = specs
            .iter()
            .map(|s| {
                if s.has_params() {
                    (self.policy.increment_fraction as f64 * s.out_width as f64).ceil() as usize
                } else {
                    0
                }
            })
            .collect();
        loop {
            // Relu layers mirror the width of the layer feeding them.
            for l in 0..added.len() {
                if specs[l].kind == LayerKind::Relu {
                    added[l] = if l == 0 { 0 } else { added[l - 1] };
                }
            }
            let cost = self.net.growth_cost(&added)?;
            if cost == 0 {
                return Ok(None);
            }
            if cost <= allowed {
                return Ok(Some(added));
            }
            // Shrink the largest pending increment and retry.
            let mut target = None;
            for (l, s) in specs.iter().enumerate() {
                if s.has_params() && added[l] > 0 {
                    match target {
                        None => target = Some(l),
                        Some(t) if added[l] > added[t] => target = Some(l),
                        _ => {}
                    }
                }
            }
            match target {
                Some(l) => added[l] -= 1,
                None => return Ok(None),
            }
        }
    }

    fn grow_for_retry(
        &mut self,
        sess: &mut TaskSession,
        task: u16,
        attempt: usize,
    ) -> Result<bool> {
        let added = match self.plan_growth()? {
            Some(a) => a,
            None => return Ok(false),
        };
        sess.write_back(&mut self.net);
        let range = ledger::grow(&mut self.ledger, &mut self.net, &added)?;
        self.growth_events += 1;

        // Fresh weights start near zero; small noise breaks symmetry.
        let mut rng = ChaCha8Rng::seed_from_u64(mix(
            self.run_seed,
            &[tag::GROWTH_NOISE, task as u64, attempt as u64],
        ));
        for i in range {
            self.net.params_mut()[i] = 1e-3 * (2.0 * rng.random::<f32>() - 1.0);
        }
        if self.reset_free_on_grow {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(
                self.run_seed,
                &[tag::FREE_RESET, task as u64, attempt as u64],
            ));
            for i in 0..self.net.n_params() {
                if self.ledger.owner(i) == FREE {
                    let a = nn::uniform_limit(&self.net.specs()[self.net.layer_of_param(i)]);
                    self.net.params_mut()[i] = a * (2.0 * rng.random::<f32>() - 1.0);
                }
            }
        }
        sess.rebuild_after_growth(&self.net, &self.ledger)?;
        Ok(true)
    }

    /// Logits of a committed task on a sample batch, computed from the
    /// frozen view: owned weights plus mask-picked prior weights, free and
    /// later-task weights excluded. Deterministic and stable for the rest of
    /// the run.
    pub fn task_logits(&self, task_id: u16, samples: &Tensor) -> Result<Tensor> {
        if task_id == 0 || task_id > self.ledger.committed_tasks() {
            return Err(Error::UnknownTask(task_id));
        }
        let record = &self.tasks[(task_id - 1) as usize];
        let head = record.head.padded_to(self.net.output_width())?;
        let task_net = self.net.extended_with_head(&head.weights, &head.bias)?;
        let mut eff =
            self.ledger
                .compose_view(self.net.params(), task_id, record.mask.bits(), false)?;
        eff.extend_from_slice(&head.weights);
        eff.extend_from_slice(&head.bias);
        task_net.forward(&eff, samples)
    }

    /// Accuracy of a committed task on an evaluation set.
    pub fn evaluate(&self, task_id: u16, data: &Dataset) -> Result<f32> {
        let logits = self.task_logits(task_id, data.samples())?;
        let record = &self.tasks[(task_id - 1) as usize];
        for &y in data.labels() {
            if y as usize >= record.head.classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: record.head.classes,
                });
            }
        }
        Ok(nn::accuracy(&logits, data.labels()))
    }
}
