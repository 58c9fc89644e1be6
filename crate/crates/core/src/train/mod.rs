//! Reverse-mode autodiff and toy sequence classifiers.
//!
//! The CSP sublayer is differentiated with its permutations held fixed: the
//! sort is piecewise constant in the inputs, so the permutation itself is the
//! Jacobian wherever one exists.

pub mod checkpoint;
pub mod model;
pub mod tape;
pub mod task;
pub mod trainer;

pub use checkpoint::{read_checkpoint, to_bytes, write_checkpoint};
pub use model::{accuracy, Inputs, Model, ModelKind, ModelSpec, Pooling};
pub use tape::{NodeId, ParamStore, Tape};
pub use task::{Batch, SyntheticTask, TaskKind};
pub use trainer::{gradient_check, train, GradCheck, History, Metric, TrainConfig, METRICS_HEADER};
