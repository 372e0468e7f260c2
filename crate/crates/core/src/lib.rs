//! Continual-learning engine built around a single shared parameter store.
//!
//! Tasks arrive sequentially. Each task compacts itself by gradual magnitude
//! pruning against an accuracy goal; the surviving weights become owned by
//! that task and never change again, which makes earlier tasks' predictions
//! bit-identical for the rest of the run. Later tasks reuse older weights
//! through a learnable binary picking mask, train on the released (free)
//! weights, and may widen the network within a bounded expansion ratio when
//! the goal is out of reach.
//!
//! Modules:
//! - [`nn`]: deterministic feed-forward network over an external effective
//!   weight vector, with reverse-mode gradients and masked SGD.
//! - [`ledger`]: per-parameter ownership partition and task views.
//! - [`mask`]: shadow masks, binarization, straight-through training.
//! - [`prune`]: gradual magnitude pruning with retraining and rollback.
//! - [`controller`]: the per-task learn/grow/commit orchestration.
//! - [`data`]: task splitting, synthetic tasks, IDX/CSV loading, batching.
//! - [`checkpoint`] / [`report`]: bit-exact persistence and CSV reports.
//! - [`experiment`]: whole-run driver with goal derivation from baselines.

pub mod checkpoint;
pub mod controller;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ledger;
pub mod mask;
pub mod nn;
pub mod prune;
pub mod report;
pub mod seeds;
pub mod session;
pub mod tensor;

pub use controller::{set_accuracy_goal, CpgState, GoalMode, GrowthPolicy, TaskRecord};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, GoalPlan, RunOutcome};
pub use ledger::Ledger;
pub use mask::{FrozenMask, PickMode, ShadowMask};
pub use nn::{build_network, LayerKind, LayerSpec, Network};
pub use prune::{select_prune_set, AccuracyGoal, PruneSchedule};
pub use report::{emit_report, size_report, RunReport, SizeReport, TaskRow};
pub use session::{HeadParams, Hyper, TaskSession};
pub use tensor::Tensor;
