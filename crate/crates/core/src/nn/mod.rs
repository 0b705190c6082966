//! Minimal deterministic differentiable-computation core.

pub mod checkpoint;
pub mod graph;
pub(crate) mod kernels;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use optim::{OptimizerKind, OptimizerState, PlateauScheduler};
pub use tensor::{ParamSet, Tensor};
