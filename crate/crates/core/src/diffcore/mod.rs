//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is built fresh for every forward pass (define-by-run), which
//! lets the number of unrolled clustering iterations change at runtime.
//! Values are addressed through copyable [`Var`] handles.
//!
//! ```
//! use danet::diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let a = tape.param(Tensor::row(vec![1.0, 2.0]));
//! let b = tape.constant(Tensor::column(vec![3.0, 4.0]));
//! let y = tape.matmul(a, b).unwrap();
//! let s = tape.sum(y);
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(tape.value(y).data(), &[11.0]);
//! assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
//! ```

pub mod kernels;
mod tape;
mod tensor;

pub use kernels::EPS;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("{op}: range {start}+{len} exceeds dimension {dim}")]
    Range {
        op: &'static str,
        start: usize,
        len: usize,
        dim: usize,
    },
    #[error("rows have different lengths")]
    Ragged,
    #[error("backward needs a 1x1 scalar, got {0:?}")]
    NotScalar([usize; 2]),
}
