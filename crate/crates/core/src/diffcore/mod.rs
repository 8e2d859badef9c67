//! Reverse-mode differentiation.
//!
//! Scalar code is written once against [`Scalar`] and evaluated either on
//! `f64` or on a [`Tape`]. Dense network layers do not go through the tape:
//! they supply their own vector-Jacobian products and hand the resulting
//! adjoints back to the tape as seeds (see `occupancy`), which keeps the tape
//! small enough to differentiate losses with respect to the 63 keypoint
//! coordinates.

mod check;
mod scalar;
mod tape;

pub use check::{
    central_differences, check_gradient, check_gradient_rounded, finite_diff_check, max_relative_error, GradCheck,
    ScalarFn, DEFAULT_STEP, ERROR_FLOOR,
};
pub use scalar::Scalar;
#[allow(unused_imports)]
pub(crate) use scalar::{leaky_f64, logistic_f64};
pub use tape::{record, Adjoints, Recording, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("seed has {got} entries but the recording has {expected} outputs")]
    ShapeMismatch { expected: usize, got: usize },
}
