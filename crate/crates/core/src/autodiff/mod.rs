//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] is a dynamic tape: every forward pass records its operations
//! in execution order, so node indices are already a topological order and
//! the backward sweep is a single reverse scan.

mod graph;
mod optim;
mod tensor;

pub use graph::{Graph, OpKind, Var};
pub use optim::{grad_norm, sgd_step};
pub use tensor::Tensor;
