//! Frame-index-to-frame video representation with Haar-wavelet frequency
//! separation.
//!
//! The crate covers the whole pipeline: the network ([`model`]), its losses
//! and quality metrics ([`losses`]), frame ingestion and task datasets
//! ([`data`]), the optimization loop ([`trainer`]), and the model-to-bitstream
//! compressor ([`compress`]).

pub mod checkpoint;
pub mod compress;
pub mod data;
mod error;
pub mod frequency;
pub mod losses;
pub mod model;
pub mod optim;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
pub use fanerv_autograd as autograd;

/// Element type usable by every module in this crate.
pub trait Scalar: fanerv_autograd::Real + rustfft::FftNum {}

impl<T: fanerv_autograd::Real + rustfft::FftNum> Scalar for T {}

/// A decoded RGB frame, `[3, height, width]`, nominally in `[0, 1]`.
pub type Frame = fanerv_autograd::Tensor<f32>;
