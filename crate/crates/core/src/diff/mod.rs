//! Reverse-mode differentiation over vectors and matrices, and the
//! parameter store that training updates.

mod params;
mod tape;

pub use params::{AdamW, Param, ParamId, ParamStore};
pub use tape::{smooth_relu, smooth_relu_grad, DiffError, Gradients, Tape, Unary, Var};
