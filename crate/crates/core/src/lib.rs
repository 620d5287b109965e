//! Relabeling engine and experiment pipeline for sub-pseudo-label (SPL)
//! supervision.
//!
//! The crate turns a weakly-labeled clip corpus plus a teacher model's
//! predictions into a supervised pretraining set: every (weak label, teacher
//! prediction) pair becomes its own class, optionally reduced by merging or
//! discarding rare off-diagonal pairs, or collapsed to per-class
//! agree/disagree labels. A small student model is pretrained on the
//! relabeled corpus, its head is swapped back to the original class count,
//! and it is fine-tuned on a clean target set.
//!
//! Modules:
//! - [`record`]: clip records and JSONL serialization
//! - [`relabel`]: confusion matrices, label spaces, relabeling strategies
//! - [`model`]: linear-softmax and MLP classifiers, SGD trainer, checkpoints
//! - [`corpus`]: synthetic temporally-noisy corpus generator
//! - [`eval`]: top-k accuracy, mean average precision, class distributions
//! - [`pipeline`]: end-to-end experiment orchestration
//! - [`seed`]: deterministic per-stage seed derivation

pub mod corpus;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod record;
pub mod relabel;
pub mod seed;

pub use record::{ClassCount, ClipRecord};
pub use relabel::{ConfusionMatrix, SplLabelSpace, StrategyConfig, StrategyKind};
