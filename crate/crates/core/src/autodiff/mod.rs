//! Dense 64-bit tensors with reverse-mode differentiation, flat parameter
//! vectors, optimizers and a finite-difference gradient oracle.

mod gradcheck;
mod operator;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use operator::{CsrMatrix, Propagator};
pub use optim::{AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use params::{ParamEntry, ParamGroup, ParamLayout, ParamRegistry, ParamVector};
pub use tape::{sigmoid, softplus, Tape, Var};
pub use tensor::Tensor;
