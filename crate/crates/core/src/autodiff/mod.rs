//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gemm;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_all, grad_check_resampled, relative_error, GradCheck};
pub use ops::batch_norm::{BatchStats, Mode, RunningStats};
pub use ops::elementwise::sigmoid;
pub use ops::pool::PoolKind;
pub use tape::{BinaryKind, Tape, UnaryKind, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
