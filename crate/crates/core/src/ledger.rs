//! Per-parameter ownership ledger.
//!
//! Each flat parameter index carries an owner tag: 0 means free, `k >= 1`
//! means the weight was committed by task `k` and is immutable from then on.
//! The ledger composes per-task effective weight vectors from owned weights
//! plus mask-picked weights of earlier tasks.

use crate::error::{Error, Result};
use crate::nn::Network;

/// Owner tag value marking a free (unowned) parameter.
pub const FREE: u16 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    owners: Vec<u16>,
    committed: u16,
}

impl Ledger {
    pub fn new(n_params: usize) -> Result<Self> {
        if n_params == 0 {
            return Err(Error::InvalidConfig("ledger over zero parameters".into()));
        }
        Ok(Self {
            owners: vec![FREE; n_params],
            committed: 0,
        })
    }

    pub(crate) fn from_parts(owners: Vec<u16>, committed: u16) -> Result<Self> {
        if owners.is_empty() {
            return Err(Error::Format("empty owner table".into()));
        }
        if owners.iter().any(|&o| o > committed) {
            return Err(Error::Format("owner tag exceeds committed task count".into()));
        }
        Ok(Self { owners, committed })
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn committed_tasks(&self) -> u16 {
        self.committed
    }

    pub fn owner(&self, index: usize) -> u16 {
        self.owners[index]
    }

    pub fn owners(&self) -> &[u16] {
        &self.owners
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.owners.len())
            .filter(|&i| self.owners[i] == FREE)
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.owners.iter().filter(|&&o| o == FREE).count()
    }

    pub fn owned_count(&self, task_id: u16) -> usize {
        self.owners.iter().filter(|&&o| o == task_id).count()
    }

    /// Indices owned by tasks `1..task_id`, ascending. This set is fixed for
    /// all time once task `task_id` starts training, because owner tags only
    /// ever move from free to a task at or after the current one.
    pub fn prior_owned_indices(&self, task_id: u16) -> Vec<usize> {
        (0..self.owners.len())
            .filter(|&i| self.owners[i] != FREE && self.owners[i] < task_id)
            .collect()
    }

    /// Commits the surviving indices of a task. Every survivor must be free;
    /// claiming an owned index would overwrite an earlier task and aborts
    /// without mutating anything.
    pub fn commit_task(&mut self, task_id: u16, surviving: &[usize]) -> Result<()> {
        if task_id != self.committed + 1 {
            return Err(Error::TaskOrder {
                expected: self.committed + 1,
                got: task_id,
            });
        }
        for &i in surviving {
            if i >= self.owners.len() {
                return Err(Error::LengthMismatch {
                    what: "surviving index",
                    expected: self.owners.len(),
                    got: i,
                });
            }
            if self.owners[i] != FREE {
                return Err(Error::OwnershipViolation {
                    index: i,
                    owner: self.owners[i],
                });
            }
        }
        for &i in surviving {
            self.owners[i] = task_id;
        }
        self.committed = task_id;
        Ok(())
    }

    pub(crate) fn extend_free(&mut self, added: usize) {
        self.owners.extend(std::iter::repeat_n(FREE, added));
    }

    /// Effective weight vector for one task's view of the shared store.
    ///
    /// `pick_mask` has one bit per index owned by tasks `1..task_id`, in
    /// ascending flat-index order. Output entries are:
    /// the parameter itself where owned by `task_id`; the parameter gated by
    /// its mask bit where owned by an earlier task; the parameter where free
    /// and `include_free` is set; and exactly `0.0` everywhere else.
    pub fn compose_view(
        &self,
        params: &[f32],
        task_id: u16,
        pick_mask: &[bool],
        include_free: bool,
    ) -> Result<Vec<f32>> {
        if params.len() != self.owners.len() {
            return Err(Error::LengthMismatch {
                what: "parameters for view",
                expected: self.owners.len(),
                got: params.len(),
            });
        }
        let prior = self
            .owners
            .iter()
            .filter(|&&o| o != FREE && o < task_id)
            .count();
        if pick_mask.len() != prior {
            return Err(Error::LengthMismatch {
                what: "pick mask",
                expected: prior,
                got: pick_mask.len(),
            });
        }
        let mut out = vec![0.0f32; params.len()];
        let mut m = 0usize;
        for (i, (&owner, &p)) in self.owners.iter().zip(params).enumerate() {
            out[i] = if owner == task_id {
                p
            } else if owner != FREE && owner < task_id {
                let bit = pick_mask[m];
                m += 1;
                if bit {
                    p
                } else {
                    0.0
                }
            } else if owner == FREE && include_free {
                p
            } else {
                0.0
            };
        }
        Ok(out)
    }

    /// Structural sanity scan: owner tags never exceed the committed count.
    /// The owned sets are disjoint by construction (one tag per index).
    pub fn check_partition(&self) -> Result<()> {
        for (i, &o) in self.owners.iter().enumerate() {
            if o > self.committed {
                return Err(Error::OwnershipViolation { index: i, owner: o });
            }
        }
        Ok(())
    }
}

/// Widens the network and extends the ledger with matching free entries.
/// Appended parameters start at zero with owner 0, so every committed task's
/// view is unchanged. Returns the appended flat-index range.
pub fn grow(
    ledger: &mut Ledger,
    net: &mut Network,
    added_out: &[usize],
) -> Result<std::ops::Range<usize>> {
    if ledger.len() != net.n_params() {
        return Err(Error::LengthMismatch {
            what: "ledger",
            expected: net.n_params(),
            got: ledger.len(),
        });
    }
    let range = net.append_units(added_out)?;
    ledger.extend_free(range.len());
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, LayerSpec};

    #[test]
    fn new_ledger_is_all_free() {
        let l = Ledger::new(5).unwrap();
        assert_eq!(l.owners(), &[0, 0, 0, 0, 0]);
        assert_eq!(l.free_count(), 5);
        assert_eq!(l.committed_tasks(), 0);
        assert!(Ledger::new(0).is_err());
    }

    #[test]
    fn commit_marks_survivors_and_rejects_owned() {
        let mut l = Ledger::new(4).unwrap();
        l.commit_task(1, &[2]).unwrap();
        assert_eq!(l.owners(), &[0, 0, 1, 0]);
        l.commit_task(2, &[0, 3]).unwrap();
        assert_eq!(l.owners(), &[2, 0, 1, 2]);

        let mut l2 = Ledger::new(4).unwrap();
        l2.commit_task(1, &[1]).unwrap();
        let before = l2.clone();
        assert!(matches!(
            l2.commit_task(2, &[1]),
            Err(Error::OwnershipViolation { index: 1, owner: 1 })
        ));
        assert_eq!(l2, before);
    }

    #[test]
    fn commit_out_of_sequence_rejected() {
        let mut l = Ledger::new(3).unwrap();
        assert!(matches!(
            l.commit_task(2, &[0]),
            Err(Error::TaskOrder { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn empty_commit_is_valid() {
        let mut l = Ledger::new(3).unwrap();
        l.commit_task(1, &[]).unwrap();
        assert_eq!(l.committed_tasks(), 1);
        assert_eq!(l.owned_count(1), 0);
        assert_eq!(l.free_count(), 3);
    }

    #[test]
    fn compose_view_enumerated_ownership_cases() {
        // Hand oracle over the four ownership cases:
        // owner 1 (prior, picked), owner 1 (prior, dropped),
        // owner 2 (own), owner 0 (free).
        let mut l = Ledger::new(4).unwrap();
        l.commit_task(1, &[0, 1]).unwrap();
        l.commit_task(2, &[2]).unwrap();
        let params = [2.0f32, -3.0, 4.0, 5.0];
        let frozen = l.compose_view(&params, 2, &[true, false], false).unwrap();
        assert_eq!(frozen, vec![2.0, 0.0, 4.0, 0.0]);
        let training = l.compose_view(&params, 2, &[true, false], true).unwrap();
        assert_eq!(training, vec![2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn later_task_weights_contribute_zero_to_old_views() {
        let mut l = Ledger::new(3).unwrap();
        l.commit_task(1, &[0]).unwrap();
        l.commit_task(2, &[1]).unwrap();
        let view = l.compose_view(&[1.0, 9.0, 9.0], 1, &[], false).unwrap();
        assert_eq!(view, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn task_one_view_without_free_has_only_owned_entries() {
        let mut l = Ledger::new(4).unwrap();
        l.commit_task(1, &[1, 2]).unwrap();
        let view = l
            .compose_view(&[0.5, 1.5, 2.5, 3.5], 1, &[], false)
            .unwrap();
        assert_eq!(view, vec![0.0, 1.5, 2.5, 0.0]);
    }

    #[test]
    fn pick_mask_length_is_checked() {
        let mut l = Ledger::new(3).unwrap();
        l.commit_task(1, &[0, 2]).unwrap();
        assert!(l.compose_view(&[1.0, 2.0, 3.0], 2, &[true], false).is_err());
    }

    #[test]
    fn grow_keeps_old_views_bit_identical() {
        let mut net = build_network(
            vec![LayerSpec::dense(4, 8), LayerSpec::dense(8, 3)],
            21,
        )
        .unwrap();
        let mut l = Ledger::new(net.n_params()).unwrap();
        let survivors: Vec<usize> = (0..30).collect();
        l.commit_task(1, &survivors).unwrap();
        let view_before = l
            .compose_view(net.params(), 1, &[], false)
            .unwrap();
        let range = grow(&mut l, &mut net, &[2, 0]).unwrap();
        assert_eq!(range.len(), (2 * 4 + 2) + (2 * 3));
        assert_eq!(l.len(), net.n_params());
        assert!(range.clone().all(|i| l.owner(i) == FREE));
        let view_after = l.compose_view(net.params(), 1, &[], false).unwrap();
        assert_eq!(&view_after[..view_before.len()], &view_before[..]);
        assert!(view_after[view_before.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn free_indices_track_commits() {
        let mut l = Ledger::new(3).unwrap();
        assert_eq!(l.free_indices(), vec![0, 1, 2]);
        l.commit_task(1, &[0, 1, 2]).unwrap();
        assert!(l.free_indices().is_empty());
        assert_eq!(l.free_count(), 0);
    }

    #[test]
    fn prior_owned_is_stable_under_later_commits() {
        let mut l = Ledger::new(6).unwrap();
        l.commit_task(1, &[0, 4]).unwrap();
        let before = l.prior_owned_indices(2);
        l.commit_task(2, &[1]).unwrap();
        l.commit_task(3, &[5]).unwrap();
        assert_eq!(l.prior_owned_indices(2), before);
        assert_eq!(l.prior_owned_indices(4), vec![0, 1, 4, 5]);
    }
}
