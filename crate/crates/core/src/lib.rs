//! Synthesis and training of neural feedback controllers that provably
//! satisfy signal temporal logic tasks.
//!
//! An STL formula is compiled into time-varying high-order control barrier
//! functions whose parameters are produced by a network from the initial
//! state. A differentiable QP enforces the barrier constraints on top of a
//! learned reference control, and the whole controller is trained by
//! back-propagating a smooth robustness objective through model rollouts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod controller;
pub mod dqp;
pub mod dynamics;
pub mod hocbf;
pub mod scenario;
pub mod sim;
pub mod squash;
pub mod stl;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
