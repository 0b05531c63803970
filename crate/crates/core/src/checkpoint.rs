//! Self-describing checkpoint container.
//!
//! Layout (little-endian): magic `FANC`, version `u16`, header length `u32`,
//! JSON header, then raw `f32` payload. The header lists every tensor by its
//! hierarchical name with shape and payload offset, and carries a SHA-256 of
//! the payload.

use std::path::Path;

use fanerv_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::hex;
use crate::error::{Error, Result};
use crate::model::{Fanerv, ModelConfig, ParamStore};
use crate::optim::{Optimizer, OptimizerConfig, Slots};
use crate::trainer::{MetricRow, Task, TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"FANC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the payload.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    config: OptimizerConfig,
    steps: u64,
    skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    task: Option<Task>,
    epoch: usize,
    seed: u64,
    history: Vec<MetricRow>,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub task: Option<Task>,
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<MetricRow>,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Optimizer<f32>>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, train: Option<TrainConfig>, task: Option<Task>) -> Self {
        Self {
            model: state.model.config.clone(),
            train,
            task,
            epoch: state.epoch,
            seed: state.seed,
            history: state.history.clone(),
            params: state.params.clone(),
            optimizer: Some(state.optimizer.clone()),
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        let model = Fanerv::new(self.model)?;
        let optimizer = match self.optimizer {
            Some(o) => o,
            None => Optimizer::new(OptimizerConfig::adan(), &self.params.tensors),
        };
        Ok(TrainState {
            model,
            params: self.params,
            optimizer,
            epoch: self.epoch,
            seed: self.seed,
            history: self.history,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = Fanerv::new(self.model.clone())?;
        let specs = model.param_specs();
        if specs.len() != self.params.tensors.len() {
            return Err(Error::Format("parameter store does not match the model config".into()));
        }
        let mut payload: Vec<f32> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f32]| {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: payload.len(),
            });
            payload.extend_from_slice(data);
        };
        for (spec, t) in specs.iter().zip(&self.params.tensors) {
            push(format!("param.{}", spec.name), t.shape().to_vec(), t.data());
        }
        if let Some(opt) = &self.optimizer {
            for (spec, s) in specs.iter().zip(&opt.slots) {
                for (slot, data) in [("m", &s.m), ("v", &s.v), ("n", &s.n), ("prev_grad", &s.prev_grad)] {
                    push(format!("optim.{slot}.{}", spec.name), vec![data.len()], data);
                }
            }
        }
        let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            task: self.task.clone(),
            epoch: self.epoch,
            seed: self.seed,
            history: self.history.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                steps: o.steps,
                skipped: o.skipped,
            }),
            tensors,
            payload_sha256: hex(&Sha256::digest(&bytes)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(10 + json.len() + bytes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(10..10 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let raw = &bytes[10 + hlen..];
        if hex(&Sha256::digest(raw)) != header.payload_sha256 {
            return Err(Error::Integrity("checkpoint payload checksum mismatch".into()));
        }
        if raw.len() % 4 != 0 {
            return Err(Error::Format("payload is not a whole number of f32 values".into()));
        }
        let payload: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let read = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let n: usize = e.shape.iter().product();
            let data = payload
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Format(format!("tensor {name} out of bounds")))?;
            Ok((e.shape.clone(), data.to_vec()))
        };

        let model = Fanerv::new(header.model.clone())?;
        let mut tensors = Vec::new();
        for spec in model.param_specs() {
            let (shape, data) = read(&format!("param.{}", spec.name))?;
            if shape != spec.shape {
                return Err(Error::Format(format!(
                    "{}: stored shape {shape:?}, model expects {:?}",
                    spec.name, spec.shape
                )));
            }
            tensors.push(Tensor::from_vec(&shape, data));
        }
        let optimizer = match &header.optimizer {
            Some(oh) => {
                let mut slots = Vec::new();
                for spec in model.param_specs() {
                    let get = |slot: &str| read(&format!("optim.{slot}.{}", spec.name)).map(|(_, d)| d);
                    slots.push(Slots {
                        m: get("m")?,
                        v: get("v")?,
                        n: get("n")?,
                        prev_grad: get("prev_grad")?,
                    });
                }
                Some(Optimizer {
                    config: oh.config,
                    steps: oh.steps,
                    skipped: oh.skipped,
                    slots,
                })
            }
            None => None,
        };
        Ok(Self {
            model: header.model,
            train: header.train,
            task: header.task,
            epoch: header.epoch,
            seed: header.seed,
            history: header.history,
            params: ParamStore { tensors },
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
