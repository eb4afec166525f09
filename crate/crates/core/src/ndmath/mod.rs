//! Dense `f64` tensors with a small reverse-mode autodiff tape.

mod check;
mod graph;
mod tensor;

pub use check::finite_diff_check;
pub use graph::{cosine_matrix, log_sum_exp, sigmoid, Gradients, Graph, Var};
pub use tensor::{matmul, Tensor};


/// Default cosine denominator guard.
pub const COSINE_EPS: f64 = 1e-8;

#[cfg(test)]
mod tests;
