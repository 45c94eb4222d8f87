//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub mod check;
mod gemm;
mod loss;
mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use loss::{bce_value, dice_value, focal_value, LossKind, EPS};
pub use optim::Adam;
pub use param::{ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
