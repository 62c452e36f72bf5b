//! Minimal dense tensors, a reverse-mode autodiff tape and Adam.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
