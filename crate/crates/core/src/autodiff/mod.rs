//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive in execution order, so the node list is
//! a topological order by construction and the backward sweep is a single
//! reverse pass. [`Var`] implements [`Tensor`](crate::linalg::Tensor), which is
//! how the filter kernels and networks get gradients without custom rules.

mod check;
mod ops;
mod tape;

pub use check::{grad_check, GradCheckReport};
pub use ops::Primitive;
pub use tape::{Gradients, NodeId, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain violation in {op} at node {node}: {detail}")]
    Domain { op: &'static str, node: usize, detail: &'static str },
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("{0} inputs given, primitive expects {1}")]
    Arity(usize, &'static str),
}
