//! Small reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse. Values are stored once on the tape and backward
//! closures read them by index, so no operation copies its inputs.

mod ops;
mod tape;
mod tensor;

pub use ops::gradient_check;
pub use tape::{sigmoid, softplus, softplus_inverse, GradSink, Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
