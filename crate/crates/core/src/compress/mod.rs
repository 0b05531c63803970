//! Model-to-bitstream pipeline.

mod artifact;
mod finetune;
mod quant;
pub mod range;
mod stream;

pub use artifact::{quantize_embeddings, ArtifactHeader, CompressedArtifact, DecodedArtifact};
pub use finetune::{
    compress_finetune, initial_embeddings, laplace_bits, quant_step, straight_through, FinetuneConfig, FinetuneState,
    FLOAT_BITS,
};
pub use quant::{fake_quantize, quantize, QuantSpec, QuantizedTensor};
pub use stream::{decode_symbols, encode_symbols, entropy_decode, entropy_encode};

/// `total_bits / (T * H * W)`.
pub fn compute_bpp(total_bits: u64, frames: usize, height: usize, width: usize) -> f64 {
    total_bits as f64 / (frames * height * width) as f64
}
