//! Symmetric uniform per-tensor quantization.

use fanerv_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self { bits: 8 }
    }
}

impl QuantSpec {
    pub fn new(bits: u32) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::Config {
                key: "bits".into(),
                reason: format!("{bits} outside 2..=16"),
            });
        }
        Ok(Self { bits })
    }

    /// Largest symbol magnitude, `2^(bits-1) - 1`.
    pub fn qmax(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    /// Symbols map to `0..alphabet()` after adding `qmax`.
    pub fn alphabet(&self) -> usize {
        2 * self.qmax() as usize + 1
    }
}

/// Integer symbols plus the tensor's largest magnitude. The step size is
/// `max_abs / qmax`, or 1 for an all-zero tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub bits: u32,
    pub max_abs: f32,
    pub symbols: Vec<i32>,
}

fn step(max_abs: f32, qmax: i32) -> f64 {
    if max_abs == 0.0 {
        1.0
    } else {
        max_abs as f64 / qmax as f64
    }
}

impl QuantizedTensor {
    pub fn spec(&self) -> QuantSpec {
        QuantSpec { bits: self.bits }
    }

    pub fn scale(&self) -> f64 {
        step(self.max_abs, self.spec().qmax())
    }

    /// `symbol * max_abs / qmax`, rounded once to `f32`, so the extreme
    /// symbols map back to `±max_abs` exactly.
    pub fn dequantize(&self) -> Tensor<f32> {
        let q = self.spec().qmax() as f64;
        let m = self.max_abs as f64;
        let data = if self.max_abs == 0.0 {
            self.symbols.iter().map(|&s| s as f32).collect()
        } else {
            self.symbols.iter().map(|&s| (s as f64 * m / q) as f32).collect()
        };
        Tensor::from_vec(&self.shape, data)
    }
}

pub fn quantize(t: &Tensor<f32>, spec: QuantSpec) -> Result<QuantizedTensor> {
    let spec = QuantSpec::new(spec.bits)?;
    if !t.all_finite() {
        return Err(Error::Domain("cannot quantize a tensor with non-finite values".into()));
    }
    let max_abs = t.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let qmax = spec.qmax();
    let scale = step(max_abs, qmax);
    let symbols = t
        .data()
        .iter()
        .map(|&v| ((v as f64 / scale).round() as i32).clamp(-qmax, qmax))
        .collect();
    Ok(QuantizedTensor {
        shape: t.shape().to_vec(),
        bits: spec.bits,
        max_abs,
        symbols,
    })
}

/// `dequantize(quantize(t))`.
pub fn fake_quantize(t: &Tensor<f32>, spec: QuantSpec) -> Result<Tensor<f32>> {
    Ok(quantize(t, spec)?.dequantize())
}
