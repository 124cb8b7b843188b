//! Reverse-mode autodiff, layers' building blocks, optimizers and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{BnMode, Gradients, Graph, Var};
pub use params::ParamSet;
pub use tensor::{Scalar, Tensor};
