//! Reverse-mode differentiation with respect to model parameters.
//!
//! State gradients (such as the gradient of a learned Hamiltonian) are formed
//! analytically from dictionary Jacobians, so the tape only ever needs first
//! derivatives with respect to registered parameters.

mod scalar;
mod tape;

pub use scalar::Scalar;
pub use tape::{GradientMap, Op, Tape, TapeError, Var};
