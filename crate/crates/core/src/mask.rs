//! Learnable binary picking masks over prior-task weights.
//!
//! A real-valued shadow mask is trained by gradient descent; thresholding it
//! yields the binary mask actually applied in the forward pass. Because
//! binarization is not differentiable, training uses straight-through
//! estimation: the gradient that reaches mask position `i` is
//! `d(loss)/d(effective_weight_i) * weight_i`, applied to the shadow value as
//! if binarization were the identity.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::session::{Hyper, TaskSession};

/// Thresholds a shadow vector into bits: `shadow[i] > threshold`.
/// Ties at the threshold map to 0.
pub fn binarize(shadow: &[f32], threshold: f32) -> Result<Vec<bool>> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite("binarization threshold"));
    }
    Ok(shadow.iter().map(|&s| s > threshold).collect())
}

/// How the picking mask is produced during a task's training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickMode {
    /// Learn the shadow mask by straight-through gradient descent.
    Learned,
    /// Force every prior weight picked (all mask bits 1); the shadow is kept
    /// but ignored. Disabling selection this way, combined with growth,
    /// reproduces a pack-and-expand style run.
    ForceAll,
}

/// Real-valued shadow mask with its binarization threshold.
#[derive(Debug, Clone)]
pub struct ShadowMask {
    shadow: Vec<f32>,
    threshold: f32,
}

impl ShadowMask {
    pub fn new(len: usize, init: f32, threshold: f32) -> Result<Self> {
        if !threshold.is_finite() || !init.is_finite() {
            return Err(Error::NonFinite("shadow mask initialization"));
        }
        Ok(Self {
            shadow: vec![init; len],
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.shadow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shadow.is_empty()
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn shadow(&self) -> &[f32] {
        &self.shadow
    }

    pub fn binarize(&self) -> Vec<bool> {
        binarize(&self.shadow, self.threshold).expect("threshold validated at construction")
    }

    /// Snapshot of the current binarization, immutable from here on.
    pub fn freeze(&self) -> FrozenMask {
        FrozenMask {
            bits: self.binarize(),
        }
    }

    pub(crate) fn apply_grad(&mut self, position: usize, grad: f32, lr: f32) {
        self.shadow[position] -= lr * grad;
    }
}

/// An immutable binary picking mask, fixed for the owning task's lifetime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenMask {
    bits: Vec<bool>,
}

impl FrozenMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Packs bits into bytes, little-endian bit order within each byte.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

pub fn unpack_bits(bytes: &[u8], n_bits: usize) -> Result<Vec<bool>> {
    if bytes.len() != n_bits.div_ceil(8) {
        return Err(Error::LengthMismatch {
            what: "packed mask bytes",
            expected: n_bits.div_ceil(8),
            got: bytes.len(),
        });
    }
    Ok((0..n_bits)
        .map(|i| bytes[i / 8] >> (i % 8) & 1 == 1)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    pub mean_loss: f64,
    pub batches: usize,
}

/// One pass over the task's training batches: the forward pass uses the
/// current binarized mask with free weights included, the backward pass
/// updates the shadow mask by straight-through estimation and the free
/// weights (plus the task head) by momentum SGD. Owned weights stay
/// bit-identical.
pub fn train_pick_round(
    session: &mut TaskSession,
    ledger: &Ledger,
    train: &Dataset,
    hyper: &Hyper,
    epoch_seed: u64,
) -> Result<TrainMetrics> {
    session.train_epoch(ledger, train, hyper, epoch_seed, true)
}
