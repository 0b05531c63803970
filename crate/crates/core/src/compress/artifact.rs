//! The `FANV` bitstream: decoder parameters and per-frame embeddings.
//!
//! Layout (little-endian): magic `FANV`, version `u16`, header length `u32`,
//! JSON header, payload. The tensor order is fixed by the model config:
//! every decoder-side parameter in declaration order, then the stacked
//! embeddings `[T, d, h, w]`.

use std::path::Path;

use fanerv_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::quant::{quantize, QuantSpec, QuantizedTensor};
use super::stream::{entropy_decode, entropy_encode};
use crate::data::hex;
use crate::error::{Error, Result};
use crate::model::{Fanerv, ModelConfig, ParamStore};

const MAGIC: &[u8; 4] = b"FANV";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub model: ModelConfig,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub bits: u32,
    pub payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedArtifact {
    pub header: ArtifactHeader,
    pub payload: Vec<u8>,
}

/// Dequantized contents of an artifact. Encoder weights are not part of
/// the bitstream and are left at zero.
#[derive(Clone, Debug)]
pub struct DecodedArtifact {
    pub model: Fanerv,
    pub params: ParamStore<f32>,
    pub embeddings: Vec<Tensor<f32>>,
}

fn stack(embeddings: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = embeddings.first().ok_or_else(|| Error::shape("no embeddings"))?;
    let mut shape = vec![embeddings.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * embeddings.len());
    for e in embeddings {
        if e.shape() != first.shape() {
            return Err(Error::shape("embeddings differ in shape"));
        }
        data.extend_from_slice(e.data());
    }
    Ok(Tensor::from_vec(&shape, data))
}

/// Quantizes the stacked embeddings as one tensor and returns them split
/// back per frame.
pub fn quantize_embeddings(embeddings: &[Tensor<f32>], spec: QuantSpec) -> Result<Vec<Tensor<f32>>> {
    let q = quantize(&stack(embeddings)?, spec)?.dequantize();
    let n = embeddings[0].numel();
    Ok(q.data()
        .chunks(n)
        .map(|c| Tensor::from_vec(embeddings[0].shape(), c.to_vec()))
        .collect())
}

fn layout(model: &Fanerv, header: &ArtifactHeader) -> Result<Vec<(Vec<usize>, u32)>> {
    let [d, h, w] = model.embedding_shape(header.height, header.width)?;
    let mut l: Vec<(Vec<usize>, u32)> = model.param_specs()[model.decoder_range()]
        .iter()
        .map(|s| (s.shape.clone(), header.bits))
        .collect();
    l.push((vec![header.frames, d, h, w], header.bits));
    Ok(l)
}

impl CompressedArtifact {
    pub fn build(
        model: &Fanerv,
        params: &ParamStore<f32>,
        embeddings: &[Tensor<f32>],
        height: usize,
        width: usize,
        spec: QuantSpec,
    ) -> Result<Self> {
        let spec = QuantSpec::new(spec.bits)?;
        let emb_shape = model.embedding_shape(height, width)?;
        if embeddings.iter().any(|e| e.shape() != emb_shape) {
            return Err(Error::shape(format!("embeddings must be {emb_shape:?}")));
        }
        let mut tensors = params.tensors[model.decoder_range()]
            .iter()
            .map(|t| quantize(t, spec))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(quantize(&stack(embeddings)?, spec)?);
        let payload = entropy_encode(&tensors)?;
        Ok(Self {
            header: ArtifactHeader {
                model: model.config.clone(),
                frames: embeddings.len(),
                height,
                width,
                bits: spec.bits,
                payload_sha256: hex(&Sha256::digest(&payload)),
            },
            payload,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(10 + json.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a compressed artifact (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported artifact version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(10..10 + hlen)
            .ok_or_else(|| Error::Integrity("truncated artifact header".into()))?;
        let header: ArtifactHeader =
            serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("artifact header: {e}")))?;
        let payload = bytes[10 + hlen..].to_vec();
        if hex(&Sha256::digest(&payload)) != header.payload_sha256 {
            return Err(Error::Integrity("artifact payload checksum mismatch".into()));
        }
        Ok(Self { header, payload })
    }

    /// Size of the serialized artifact in bits.
    pub fn total_bits(&self) -> Result<u64> {
        Ok(8 * self.to_bytes()?.len() as u64)
    }

    pub fn bpp(&self) -> Result<f64> {
        Ok(super::compute_bpp(
            self.total_bits()?,
            self.header.frames,
            self.header.height,
            self.header.width,
        ))
    }

    /// Quantized tensors in bitstream order.
    pub fn symbols(&self) -> Result<Vec<QuantizedTensor>> {
        let model = Fanerv::new(self.header.model.clone())?;
        entropy_decode(&self.payload, &layout(&model, &self.header)?)
    }

    pub fn decode(&self) -> Result<DecodedArtifact> {
        let model = Fanerv::new(self.header.model.clone())?;
        let mut tensors = entropy_decode(&self.payload, &layout(&model, &self.header)?)?;
        let emb = tensors.pop().expect("embedding tensor").dequantize();
        let mut params = ParamStore::<f32>::zeros(model.param_specs());
        for (i, t) in model.decoder_range().zip(tensors) {
            params.tensors[i] = t.dequantize();
        }
        let per = emb.numel() / self.header.frames.max(1);
        let shape = emb.shape()[1..].to_vec();
        let embeddings = emb
            .data()
            .chunks(per.max(1))
            .map(|c| Tensor::from_vec(&shape, c.to_vec()))
            .collect();
        Ok(DecodedArtifact {
            model,
            params,
            embeddings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl DecodedArtifact {
    /// Clamped reconstruction of frame `t`.
    pub fn frame(&self, t: usize) -> Result<Tensor<f32>> {
        let e = self
            .embeddings
            .get(t)
            .ok_or_else(|| Error::Domain(format!("frame {t} outside the artifact")))?;
        self.model
            .decode_frame(&self.params, e, crate::model::normalized_time(t, self.embeddings.len()))
    }
}
