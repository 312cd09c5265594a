//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{NamedParam, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
