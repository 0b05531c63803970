use fanerv_autograd::{Graph, Tensor};

use super::blocks::Modulation;
use super::params::{Bound, Dense, Init, ParamBuilder};
use crate::error::{Error, Result};
use crate::Scalar;

/// `[sin(2^k pi t), cos(2^k pi t)]` for `k = 0..L`, interleaved sin first.
pub fn positional_encoding(t_norm: f64, frequencies: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t_norm) {
        return Err(Error::Domain(format!("t_norm {t_norm} outside [0, 1]")));
    }
    if frequencies == 0 {
        return Err(Error::Domain("positional encoding needs at least one frequency".into()));
    }
    let mut pe = Vec::with_capacity(2 * frequencies);
    for k in 0..frequencies {
        let arg = libm::ldexp(std::f64::consts::PI * t_norm, k as i32);
        pe.push(libm::sin(arg));
        pe.push(libm::cos(arg));
    }
    Ok(pe)
}

/// Frame index mapped to `[0, 1]`; a one-frame clip sits at 0.
pub fn normalized_time(index: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        index as f64 / (frames - 1) as f64
    }
}

/// Shared two-layer MLP trunk with one zero-initialized affine head per
/// modulated stage.
#[derive(Clone, Debug)]
pub struct TemporalNet {
    pub frequencies: usize,
    pub fc1: Dense,
    pub fc2: Dense,
    pub heads: Vec<Dense>,
    pub head_channels: Vec<usize>,
}

impl TemporalNet {
    pub fn new(b: &mut ParamBuilder, frequencies: usize, hidden: usize, stage_channels: &[usize]) -> Self {
        let fc1 = Dense::new(b, "fc1", 2 * frequencies, hidden, None);
        let fc2 = Dense::new(b, "fc2", hidden, hidden, None);
        let heads = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Dense::new(b, &format!("head{i}"), hidden, 2 * c, Some(Init::Zeros)))
            .collect();
        Self {
            frequencies,
            fc1,
            fc2,
            heads,
            head_channels: stage_channels.to_vec(),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, t_norm: f64) -> Result<Vec<Modulation>> {
        let pe = positional_encoding(t_norm, self.frequencies)?;
        let pe = g.constant(Tensor::from_vec(&[pe.len()], pe.into_iter().map(T::of).collect()));
        let h = self.fc1.forward(g, p, pe);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, p, h);
        let h = g.gelu(h);
        Ok(self
            .heads
            .iter()
            .zip(&self.head_channels)
            .map(|(head, &c)| {
                let out = head.forward(g, p, h);
                let out = g.reshape(out, &[2 * c, 1, 1]);
                Modulation {
                    gamma: g.slice_channels(out, 0, c),
                    beta: g.slice_channels(out, c, c),
                }
            })
            .collect())
    }
}
