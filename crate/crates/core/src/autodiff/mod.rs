//! Reverse-mode automatic differentiation over dense row-major batches.
//!
//! A [`Tape`] records primitive operations in creation order; a reverse sweep
//! from any node yields [`Gradients`] for every leaf it reaches, including
//! plain inputs (needed for transient-input gradient norms) and parameters
//! (accumulated into a [`ParamStore`]).

pub mod check;
mod encoding;
mod matrix;
mod nn;
mod params;
mod tape;

pub use encoding::{encode_rows, encoded_len, positional_encode};
pub use matrix::{affine_rows, Matrix};
pub use nn::{dense_layer, Dense, Mlp};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

pub(crate) use nn::relu_in_place;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("node {index} was never recorded on this tape (backward before forward)")]
    NotRecorded { index: usize },
}
