//! Dense rank ≤ 2 tensors with a tape-based reverse-mode differentiator.
//!
//! Everything is `f64`: the finite-difference checks run at 1e-4 to 1e-6
//! relative tolerance, which single precision cannot reach.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use graph::{log_softmax_at, sigmoid, softmax, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
