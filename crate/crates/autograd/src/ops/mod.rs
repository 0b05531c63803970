//! Differentiable operations recorded on a [`crate::Graph`].

pub mod conv;
mod elementwise;
mod filter;
mod linear;
mod reduce;
mod shape;

pub use elementwise::{gelu, gelu_grad};
pub use shape::{pixel_shuffle, pixel_unshuffle};
