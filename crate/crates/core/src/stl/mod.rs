//! Signal temporal logic fragment: syntax, boolean semantics and smooth
//! exponential robustness.

mod formula;
mod parse;
mod semantics;
mod shape;

use thiserror::Error;

pub use formula::{Formula, Literal, Predicate, TemporalKind, TemporalUnit, Window};
pub use parse::parse;
pub use semantics::{exp_and, exp_or, robustness, satisfies, window_samples, Trajectory};
pub use shape::{PredicateShape, ShapeDerivs};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StlError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("formula outside the supported fragment: {0}")]
    Fragment(String),
    #[error("unknown predicate `{name}` at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("trajectory has {have} samples but {needed} are required")]
    TrajectoryTooShort { needed: usize, have: usize },
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
}
