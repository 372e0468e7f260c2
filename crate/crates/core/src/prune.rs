//! Gradual magnitude pruning with retraining against an accuracy goal.
//!
//! Each step prunes a slice of the smallest-magnitude trainable weights,
//! retrains the rest to restore performance, and keeps the step only if the
//! accuracy goal still holds; otherwise the pre-step snapshot is restored
//! and pruning stops. The rollback rule makes the returned state's accuracy
//! at least the goal by construction.

use crate::data::TaskData;
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::seeds::{mix, tag};
use crate::session::{Hyper, TaskSession};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSchedule {
    /// Fraction of the remaining candidates pruned per step.
    pub step_fraction: f32,
    /// Retraining epoch budget per step.
    pub retrain_epochs: usize,
    /// Per-layer floor: a layer never drops below this many trainable
    /// candidates, so pruning cannot kill a layer outright.
    pub min_remaining: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            step_fraction: 0.1,
            retrain_epochs: 5,
            min_remaining: 1,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "prune step fraction must be in (0, 1)".into(),
            ));
        }
        if self.retrain_epochs == 0 {
            return Err(Error::InvalidConfig("retrain epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where an accuracy goal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalSource {
    Explicit,
    Avg,
    Max,
    Top,
}

/// Per-task accuracy target governing both the pruning stop rule and the
/// grow-retry decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyGoal {
    pub value: f32,
    pub source: GoalSource,
}

impl AccuracyGoal {
    pub fn explicit(value: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidConfig(format!(
                "accuracy goal {value} outside [0, 1]"
            )));
        }
        Ok(Self {
            value,
            source: GoalSource::Explicit,
        })
    }
}

/// The `floor(fraction * |candidates|)` candidate indices of smallest
/// parameter magnitude; ties break toward the lower flat index. Returned
/// ascending by index.
pub fn select_prune_set(
    params: &[f32],
    candidates: &[usize],
    fraction: f32,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "prune fraction {fraction} outside [0, 1]"
        )));
    }
    for &i in candidates {
        if i >= params.len() {
            return Err(Error::LengthMismatch {
                what: "candidate index",
                expected: params.len(),
                got: i,
            });
        }
    }
    let n = (fraction as f64 * candidates.len() as f64).floor() as usize;
    let mut picked = smallest_by_magnitude(params, candidates, n, |_| true);
    picked.sort_unstable();
    Ok(picked)
}

/// Up to `n` candidates in ascending (|value|, index) order, keeping only
/// those `admit` accepts at visit time.
fn smallest_by_magnitude(
    params: &[f32],
    candidates: &[usize],
    n: usize,
    mut admit: impl FnMut(usize) -> bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by(|&a, &b| {
        params[a]
            .abs()
            .total_cmp(&params[b].abs())
            .then(a.cmp(&b))
    });
    let mut picked = Vec::with_capacity(n);
    for i in order {
        if picked.len() == n {
            break;
        }
        if admit(i) {
            picked.push(i);
        }
    }
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Trainable candidates that survived; these become the task's owned set.
    pub survivors: Vec<usize>,
    /// Evaluation accuracy of the returned state; at least the goal.
    pub achieved: f32,
    /// Accepted pruning steps.
    pub steps: usize,
}

/// Runs the prune/retrain/rollback loop on a session whose picking mask is
/// already frozen. Requires the current state to meet the goal; signals
/// `GoalNotMet` otherwise so the caller can grow instead. Owned weights and
/// the frozen mask never change.
pub fn gradual_prune(
    session: &mut TaskSession,
    ledger: &Ledger,
    data: &TaskData,
    goal: f32,
    schedule: &PruneSchedule,
    hyper: &Hyper,
    seed: u64,
) -> Result<PruneOutcome> {
    schedule.validate()?;
    let mut achieved = session.evaluate(ledger, &data.eval)?;
    if achieved < goal {
        return Err(Error::GoalNotMet {
            goal,
            achieved,
        });
    }

    let layer_of: Vec<usize> = (0..session.backbone_len())
        .map(|i| session.net().layer_of_param(i))
        .collect();
    let n_layers = session.net().specs().len();
    let mut steps = 0usize;

    loop {
        let remaining = session.active_candidates();
        if remaining.is_empty() {
            break;
        }
        let mut per_layer = vec![0usize; n_layers];
        for &i in &remaining {
            per_layer[layer_of[i]] += 1;
        }
        // At least one weight per step, otherwise small candidate pools
        // would stall before reaching the per-layer floor.
        let want = ((schedule.step_fraction as f64 * remaining.len() as f64).floor() as usize)
            .max(1);
        let prune_set = smallest_by_magnitude(session.net().params(), &remaining, want, |i| {
            let l = layer_of[i];
            if per_layer[l] > schedule.min_remaining {
                per_layer[l] -= 1;
                true
            } else {
                false
            }
        });
        if prune_set.is_empty() {
            break;
        }

        let snapshot = session.snapshot();
        let before = achieved;
        session.prune(&prune_set);

        let mut acc = session.evaluate(ledger, &data.eval)?;
        for epoch in 0..schedule.retrain_epochs {
            if acc >= goal {
                break;
            }
            session.train_epoch(
                ledger,
                &data.train,
                hyper,
                mix(seed, &[tag::PRUNE_EPOCH, steps as u64, epoch as u64]),
                false,
            )?;
            acc = session.evaluate(ledger, &data.eval)?;
        }

        if acc >= goal {
            achieved = acc;
            steps += 1;
        } else {
            session.restore(&snapshot);
            achieved = before;
            break;
        }
    }

    Ok(PruneOutcome {
        survivors: session.active_candidates(),
        achieved,
        steps,
    })
}
