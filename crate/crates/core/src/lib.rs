//! Channel-wise sample permutation (CSP) attention and the instruments used
//! to study it.
//!
//! CSP replaces an attention map by a per-channel permutation: each value
//! channel is circularly shifted and then sorted, group by group, against a
//! reference channel. The crate provides
//!
//! * [`numerics`]: dense matrices, the (1,inf)-norm rank-1 residual and a
//!   Jacobi SVD;
//! * [`permutation`] and [`schedule`]: shifts, monotone matching and shift-step
//!   schedules;
//! * [`csp`]: the operator itself and its explicit attention maps;
//! * [`attention`] and [`sinkhorn`]: softmax and doubly stochastic baselines;
//! * [`ot`]: an exhaustive optimal-transport oracle;
//! * [`rank`]: deep attention-only stacks and residual decay;
//! * [`train`]: a small reverse-mode autodiff engine and toy sequence models.

pub mod attention;
pub mod csp;
pub mod error;
pub mod numerics;
pub mod ot;
pub mod permutation;
pub mod rank;
pub mod rng;
pub mod schedule;
pub mod sinkhorn;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Matrix;
pub use permutation::Permutation;
