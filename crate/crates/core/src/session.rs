//! Training session for one task.
//!
//! A session composes the shared backbone with the task's private head into
//! a working network, tracks which parameters the task may update, and runs
//! the masked training and evaluation loops. Weights owned by committed
//! tasks are excluded from every update and stay bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::ledger::{Ledger, FREE};
use crate::mask::{PickMode, ShadowMask, TrainMetrics};
use crate::nn::{self, Network};

/// Training hyperparameters, shared by all tasks of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Learning rate for free weights and the task head.
    pub lr: f32,
    /// Learning rate for the shadow mask (straight-through updates).
    pub lr_mask: f32,
    pub momentum: f32,
    /// Epoch budget per training phase (and per growth retry).
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Binarization threshold for picking masks.
    pub mask_threshold: f32,
    /// Initial shadow value; above the threshold, so every prior weight
    /// starts picked and training prunes the picks.
    pub mask_init: f32,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            lr_mask: 1e-4,
            momentum: 0.9,
            max_epochs: 30,
            batch_size: 32,
            mask_threshold: 5e-3,
            mask_init: 1e-2,
        }
    }
}

/// A task's private output layer. Stored against the feature width at the
/// time the task trained; later backbone growth zero-pads the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub in_width: usize,
    pub classes: usize,
    /// Row-major `classes x in_width`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl HeadParams {
    pub fn seeded(in_width: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0f32 / (in_width + classes) as f32).sqrt();
        let mut draw = || a * (2.0 * rng.random::<f32>() - 1.0);
        let weights = (0..classes * in_width).map(|_| draw()).collect();
        let bias = (0..classes).map(|_| draw()).collect();
        Self {
            in_width,
            classes,
            weights,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_width * self.classes + self.classes
    }

    /// Zero-extends each row to a wider feature input. Appended features are
    /// zero under the owning task's view, so logits are bit-unchanged.
    pub fn padded_to(&self, new_in: usize) -> Result<HeadParams> {
        if new_in < self.in_width {
            return Err(Error::DimensionMismatch(format!(
                "cannot pad head from {} to narrower {}",
                self.in_width, new_in
            )));
        }
        let mut weights = vec![0.0f32; self.classes * new_in];
        for c in 0..self.classes {
            weights[c * new_in..c * new_in + self.in_width]
                .copy_from_slice(&self.weights[c * self.in_width..(c + 1) * self.in_width]);
        }
        Ok(HeadParams {
            in_width: new_in,
            classes: self.classes,
            weights,
            bias: self.bias.clone(),
        })
    }
}

/// Value snapshot of a session's mutable training state.
#[derive(Debug, Clone)]
pub struct SessionSnapshot {
    params: Vec<f32>,
    momentum: Vec<f32>,
    trainable: Vec<bool>,
}

pub struct TaskSession {
    task_id: u16,
    /// Backbone layers plus the task head; params = backbone ++ head.
    net: Network,
    /// Backbone parameter count; indices below this are ledger-governed.
    nb: usize,
    /// Prior-owned flat indices, ascending; aligned with the shadow mask.
    prior: Vec<usize>,
    shadow: ShadowMask,
    frozen: Option<Vec<bool>>,
    pick_mode: PickMode,
    trainable: Vec<bool>,
    momentum: Vec<f32>,
    head_classes: usize,
}

impl TaskSession {
    pub fn new(
        backbone: &Network,
        ledger: &Ledger,
        task_id: u16,
        classes: usize,
        head_seed: u64,
        hyper: &Hyper,
        pick_mode: PickMode,
    ) -> Result<Self> {
        if ledger.len() != backbone.n_params() {
            return Err(Error::LengthMismatch {
                what: "ledger",
                expected: backbone.n_params(),
                got: ledger.len(),
            });
        }
        // Training sessions exist only for the next uncommitted task.
        if task_id != ledger.committed_tasks() + 1 {
            return Err(Error::TaskOrder {
                expected: ledger.committed_tasks() + 1,
                got: task_id,
            });
        }
        if classes < 2 {
            return Err(Error::InvalidConfig("a task needs at least two classes".into()));
        }
        let head = HeadParams::seeded(backbone.output_width(), classes, head_seed);
        let prior = ledger.prior_owned_indices(task_id);
        let shadow = ShadowMask::new(prior.len(), hyper.mask_init, hyper.mask_threshold)?;
        let mut session = Self {
            task_id,
            net: backbone.extended_with_head(&head.weights, &head.bias)?,
            nb: backbone.n_params(),
            prior,
            shadow,
            frozen: None,
            pick_mode,
            trainable: Vec::new(),
            momentum: Vec::new(),
            head_classes: classes,
        };
        session.reset_training_state(ledger);
        Ok(session)
    }

    fn reset_training_state(&mut self, ledger: &Ledger) {
        let n = self.net.n_params();
        let mut trainable = vec![true; n];
        for (i, t) in trainable.iter_mut().enumerate().take(self.nb) {
            *t = ledger.owner(i) == FREE;
        }
        self.trainable = trainable;
        self.momentum = vec![0.0; n];
    }

    /// Rebuilds the working network after the backbone grew. Free weights
    /// and the head carry over; momentum restarts at zero; the shadow mask
    /// is reused across retries.
    pub fn rebuild_after_growth(&mut self, backbone: &Network, ledger: &Ledger) -> Result<()> {
        debug_assert!(self.frozen.is_none(), "growth after mask freeze");
        let head = self.head_params().padded_to(backbone.output_width())?;
        self.net = backbone.extended_with_head(&head.weights, &head.bias)?;
        self.nb = backbone.n_params();
        debug_assert_eq!(self.prior, ledger.prior_owned_indices(self.task_id));
        self.reset_training_state(ledger);
        Ok(())
    }

    pub fn task_id(&self) -> u16 {
        self.task_id
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn backbone_len(&self) -> usize {
        self.nb
    }

    pub fn shadow(&self) -> &ShadowMask {
        &self.shadow
    }

    pub fn head_params(&self) -> HeadParams {
        let feat = self.net.specs().last().unwrap().in_width;
        let params = self.net.params();
        let w_end = self.nb + feat * self.head_classes;
        HeadParams {
            in_width: feat,
            classes: self.head_classes,
            weights: params[self.nb..w_end].to_vec(),
            bias: params[w_end..].to_vec(),
        }
    }

    /// Mask bits used in the forward pass right now: the frozen mask once
    /// set, otherwise all-ones under `ForceAll`, otherwise the current
    /// binarized shadow.
    pub fn mask_bits(&self) -> Vec<bool> {
        if let Some(bits) = &self.frozen {
            return bits.clone();
        }
        match self.pick_mode {
            PickMode::ForceAll => vec![true; self.prior.len()],
            PickMode::Learned => self.shadow.binarize(),
        }
    }

    /// Fixes the picking mask for the rest of the task. Returns the bits.
    pub fn freeze_mask(&mut self) -> Vec<bool> {
        let bits = self.mask_bits();
        self.frozen = Some(bits.clone());
        bits
    }

    /// Effective weights for this task's training view: owned weights,
    /// mask-picked prior weights, free weights, and the head verbatim.
    pub fn compose(&self, ledger: &Ledger) -> Result<Vec<f32>> {
        let bits = self.mask_bits();
        let params = self.net.params();
        let mut eff = ledger.compose_view(&params[..self.nb], self.task_id, &bits, true)?;
        eff.extend_from_slice(&params[self.nb..]);
        Ok(eff)
    }

    /// One pass over the training set. With `update_shadow`, prior-owned
    /// positions receive straight-through mask updates; free weights and the
    /// head take a momentum SGD step either way.
    pub fn train_epoch(
        &mut self,
        ledger: &Ledger,
        train: &Dataset,
        hyper: &Hyper,
        epoch_seed: u64,
        update_shadow: bool,
    ) -> Result<TrainMetrics> {
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for batch in batch_iter(train, hyper.batch_size, epoch_seed)? {
            let eff = self.compose(ledger)?;
            let (loss, grad) = self.net.loss_and_grad(&eff, &batch.x, &batch.labels)?;
            if update_shadow && self.pick_mode == PickMode::Learned && self.frozen.is_none() {
                for (j, &fi) in self.prior.iter().enumerate() {
                    let g = grad[fi] * self.net.params()[fi];
                    self.shadow.apply_grad(j, g, hyper.lr_mask);
                }
            }
            nn::sgd_step(
                self.net.params_mut(),
                &grad,
                &self.trainable,
                hyper.lr,
                &mut self.momentum,
                hyper.momentum,
            )?;
            total += loss as f64;
            batches += 1;
        }
        Ok(TrainMetrics {
            mean_loss: if batches > 0 { total / batches as f64 } else { 0.0 },
            batches,
        })
    }

    /// Accuracy on a dataset under the current training view.
    pub fn evaluate(&self, ledger: &Ledger, eval: &Dataset) -> Result<f32> {
        let eff = self.compose(ledger)?;
        let logits = self.net.forward(&eff, eval.samples())?;
        Ok(nn::accuracy(&logits, eval.labels()))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            params: self.net.params().to_vec(),
            momentum: self.momentum.clone(),
            trainable: self.trainable.clone(),
        }
    }

    pub fn restore(&mut self, snapshot: &SessionSnapshot) {
        self.net.params_mut().copy_from_slice(&snapshot.params);
        self.momentum.clone_from(&snapshot.momentum);
        self.trainable.clone_from(&snapshot.trainable);
    }

    /// Zeroes the given backbone parameters and excludes them from updates.
    pub fn prune(&mut self, indices: &[usize]) {
        for &i in indices {
            debug_assert!(i < self.nb && self.trainable[i]);
            self.net.params_mut()[i] = 0.0;
            self.trainable[i] = false;
        }
    }

    /// Backbone indices this task may still train, ascending.
    pub fn active_candidates(&self) -> Vec<usize> {
        (0..self.nb).filter(|&i| self.trainable[i]).collect()
    }

    /// Copies the session's backbone slice into the shared store and returns
    /// the trained head. Owned entries were never updated, so this write is
    /// bit-neutral for every committed task.
    pub fn write_back(&self, backbone: &mut Network) -> HeadParams {
        debug_assert_eq!(backbone.n_params(), self.nb);
        backbone
            .params_mut()
            .copy_from_slice(&self.net.params()[..self.nb]);
        self.head_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_tasks;
    use crate::nn::{build_network, LayerSpec};

    fn toy_setup() -> (Network, Ledger, Dataset, Dataset) {
        let net = build_network(
            vec![LayerSpec::dense(4, 6), LayerSpec::relu(6)],
            3,
        )
        .unwrap();
        let ledger = Ledger::new(net.n_params()).unwrap();
        let tasks = gen_synthetic_tasks(1, 3, 4, 20, 6.0, 5).unwrap();
        let t = tasks.tasks.into_iter().next().unwrap();
        (net, ledger, t.train, t.eval)
    }

    #[test]
    fn zero_learning_rates_leave_everything_bit_unchanged() {
        let (net, ledger, train, _) = toy_setup();
        let hyper = Hyper {
            lr: 0.0,
            lr_mask: 0.0,
            ..Hyper::default()
        };
        let mut sess =
            TaskSession::new(&net, &ledger, 1, 3, 7, &hyper, PickMode::Learned).unwrap();
        let params_before: Vec<u32> = sess.net().params().iter().map(|v| v.to_bits()).collect();
        let shadow_before = sess.shadow().shadow().to_vec();
        sess.train_epoch(&ledger, &train, &hyper, 11, true).unwrap();
        let params_after: Vec<u32> = sess.net().params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(params_before, params_after);
        assert_eq!(shadow_before, sess.shadow().shadow());
    }

    #[test]
    fn owned_weights_never_move_during_training() {
        let (mut net, mut ledger, train, _) = toy_setup();
        // Task 1 owns the first half of the parameters.
        let survivors: Vec<usize> = (0..net.n_params() / 2).collect();
        ledger.commit_task(1, &survivors).unwrap();
        let owned_bits: Vec<u32> = survivors
            .iter()
            .map(|&i| net.params()[i].to_bits())
            .collect();
        let hyper = Hyper {
            lr: 0.05,
            lr_mask: 0.05,
            ..Hyper::default()
        };
        let mut sess =
            TaskSession::new(&net, &ledger, 2, 3, 9, &hyper, PickMode::Learned).unwrap();
        for epoch in 0..5 {
            sess.train_epoch(&ledger, &train, &hyper, epoch, true).unwrap();
        }
        let head = sess.write_back(&mut net);
        for (&i, &bits) in survivors.iter().zip(&owned_bits) {
            assert_eq!(net.params()[i].to_bits(), bits);
        }
        assert_eq!(head.classes, 3);
    }

    #[test]
    fn straight_through_update_matches_hand_chain_rule() {
        // One fixed prior weight w = 2.0 feeding a 2-class head. The shadow
        // update must be -lr_mask * dL/d(w_eff) * w, with dL/d(w_eff)
        // computed by an independent hand-written chain rule.
        let mut net = build_network(vec![LayerSpec::dense_no_bias(1, 1)], 0).unwrap();
        net.params_mut()[0] = 2.0;
        let mut ledger = Ledger::new(1).unwrap();
        ledger.commit_task(1, &[0]).unwrap();

        let hyper = Hyper {
            lr: 0.0,
            lr_mask: 0.1,
            batch_size: 8,
            ..Hyper::default()
        };
        let mut sess =
            TaskSession::new(&net, &ledger, 2, 2, 13, &hyper, PickMode::Learned).unwrap();
        let head = sess.head_params();

        let x = 0.7f32;
        let train = Dataset::new(
            crate::tensor::Tensor::new(vec![1, 1], vec![x]).unwrap(),
            vec![1],
            2,
        )
        .unwrap();

        // Hand oracle: z_c = hw[c] * (w_eff * x) + hb[c]; dL/dz = p - onehot;
        // dL/d(w_eff) = (sum_c dz_c * hw[c]) * x.
        let w_eff = 2.0f32 * x;
        let z0 = head.weights[0] * w_eff + head.bias[0];
        let z1 = head.weights[1] * w_eff + head.bias[1];
        let m = z0.max(z1);
        let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
        let sum = e0 + e1;
        let (p0, p1) = (e0 / sum, e1 / sum);
        let dl_dweff = (p0 * head.weights[0] + (p1 - 1.0) * head.weights[1]) * x;
        let expected_shadow = hyper.mask_init - hyper.lr_mask * dl_dweff * 2.0;

        sess.train_epoch(&ledger, &train, &hyper, 0, true).unwrap();
        let got = sess.shadow().shadow()[0];
        assert!(
            (got - expected_shadow).abs() <= 1e-6 * expected_shadow.abs().max(1.0),
            "shadow {got} vs oracle {expected_shadow}"
        );
        // The owned weight itself is untouched.
        assert_eq!(sess.net().params()[0], 2.0);
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let (net, ledger, train, _) = toy_setup();
        let hyper = Hyper::default();
        let mut sess =
            TaskSession::new(&net, &ledger, 1, 3, 1, &hyper, PickMode::Learned).unwrap();
        let snap = sess.snapshot();
        let before: Vec<u32> = sess.net().params().iter().map(|v| v.to_bits()).collect();
        sess.train_epoch(&ledger, &train, &hyper, 0, false).unwrap();
        sess.prune(&[0, 1]);
        sess.restore(&snap);
        let after: Vec<u32> = sess.net().params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        assert_eq!(sess.active_candidates().len(), net.n_params());
    }

    #[test]
    fn session_for_a_committed_task_is_rejected() {
        let (net, mut ledger, _, _) = toy_setup();
        ledger.commit_task(1, &[0, 1]).unwrap();
        let hyper = Hyper::default();
        assert!(matches!(
            TaskSession::new(&net, &ledger, 1, 3, 0, &hyper, PickMode::Learned),
            Err(Error::TaskOrder { expected: 2, got: 1 })
        ));
        assert!(matches!(
            TaskSession::new(&net, &ledger, 3, 3, 0, &hyper, PickMode::Learned),
            Err(Error::TaskOrder { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn head_padding_zero_extends_rows() {
        let head = HeadParams {
            in_width: 2,
            classes: 2,
            weights: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5, -0.5],
        };
        let padded = head.padded_to(4).unwrap();
        assert_eq!(padded.weights, vec![1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        assert_eq!(padded.bias, head.bias);
        assert!(head.padded_to(1).is_err());
    }
}
