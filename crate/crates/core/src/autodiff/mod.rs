//! Dense tensors with reverse-mode automatic differentiation.

mod nn;
mod tape;
mod tensor;

pub use tape::{Gradients, ParamSink, Tape, Var};
pub use tensor::{Parameter, Tensor};

pub(crate) use tape::huber_scalar;

#[cfg(test)]
mod tests;
