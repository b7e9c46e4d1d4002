//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Values are recorded on a [`Tape`] as primitives are applied; a single
//! reverse sweep from a scalar root yields the gradient with respect to every
//! leaf. The policy network, the trainer and the sensitivity analysis all run
//! on this substrate.
//!
//! ```
//! use bwsl_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.sum(sq).unwrap();
//! let grads = tape.backward(y, 1.0).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::{
    central_difference, finite_diff_check, finite_diff_check_coords, gradient, relative_error,
    ScalarExpr,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank <= 2, got shape {shape:?}")]
    RankTooHigh { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: argument {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a one-element root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

/// A recorded evaluation: the tape, the leaf handles of the inputs and the output.
#[derive(Debug, Clone)]
pub struct Recording {
    pub tape: Tape,
    pub inputs: Vec<Var>,
    pub output: Var,
}

impl Recording {
    pub fn value(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    pub fn backward(&self, seed: f64) -> Result<Gradients, AutodiffError> {
        self.tape.backward(self.output, seed)
    }
}

/// Records `expr` applied to `inputs` on a fresh tape.
pub fn forward<F>(inputs: &[Tensor], expr: F) -> Result<Recording, AutodiffError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let output = expr(&mut tape, &vars)?;
    Ok(Recording {
        tape,
        inputs: vars,
        output,
    })
}
