//! Dense double-precision tensors and a define-by-run reverse-mode tape.

mod fd;
mod tape;
mod tensor;

pub use fd::finite_difference;
pub use tape::{BatchNormMode, BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
