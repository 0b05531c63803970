//! Reverse-mode automatic differentiation for the feature-map networks used
//! by `fanerv-core`.
//!
//! Tensors are dense and row-major. Feature maps use `[channels, height, width]`
//! layout with an implicit batch of one, which is all the frame-at-a-time
//! training loop needs. Every operation records a backward closure on a
//! [`Graph`] tape; [`Graph::backward`] walks the tape in reverse and returns
//! gradients for the leaves that asked for them.

pub mod check;
mod graph;
pub mod ops;
mod real;
mod tensor;

pub use graph::{BackwardCtx, Gradients, Graph, Var};
pub use ops::conv::ConvGeometry;
pub use real::Real;
pub use tensor::Tensor;
