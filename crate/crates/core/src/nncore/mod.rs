//! Dense tensors, reverse-mode differentiation, loss, optimizer and
//! gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, ParamId, ParamStore, Parameter, Var};
pub use rng::{derive_seed, RngStream};
pub use tensor::{Real, Tensor};
