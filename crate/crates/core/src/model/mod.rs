//! The network: encoder, temporal modulation, upsampling decoder with
//! wavelet refinement blocks, residual tail and output head.

pub mod blocks;
mod config;
pub mod encoder;
pub mod params;
mod sizing;
pub mod temporal;

use std::ops::Range;

use fanerv_autograd::{ConvGeometry, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{Creb, HighBranch, LowBranch, Modulation, NervBlock, Tgfn, Wfub, WfubOptions};
pub use config::{Ablation, ModelConfig, StageSpec};
pub use encoder::{ConvNextBlock, Encoder};
pub use params::{Bound, Conv, Dense, DwConv, Init, ParamBuilder, ParamId, ParamSpec, ParamStore};
pub use sizing::{count_params, size_model};
pub use temporal::{normalized_time, positional_encoding, TemporalNet};

use crate::error::{Error, Result};
use crate::{Frame, Scalar};

/// One decoder stage: upsampling block plus optional refinement block.
#[derive(Clone, Debug)]
pub struct Stage {
    pub spec: StageSpec,
    pub nerv: NervBlock,
    pub wfub: Option<Wfub>,
    /// Index into the temporal heads, when the refinement block is modulated.
    pub modulation: Option<usize>,
}

/// Decoder intermediate features of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct DecoderState {
    /// Input of each stage, before upsampling.
    pub stage_inputs: Vec<Var>,
    /// Output of each stage, after refinement.
    pub stage_outputs: Vec<Var>,
}

/// Named contiguous block of parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub label: String,
    pub range: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct Fanerv {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub stem: Conv,
    pub stages: Vec<Stage>,
    pub creb: Option<Creb>,
    pub head: Conv,
    pub temporal: Option<TemporalNet>,
    specs: Vec<ParamSpec>,
    groups: Vec<ParamGroup>,
}

impl Fanerv {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new();
        let mut groups = Vec::new();
        let mark = |label: &str, b: &ParamBuilder, start: usize, groups: &mut Vec<ParamGroup>| {
            groups.push(ParamGroup {
                label: label.into(),
                range: start..b.len(),
            });
        };

        let enc_strides: Vec<usize> = config.decoder_strides.iter().rev().copied().collect();
        let start = b.len();
        let encoder = b.scoped("encoder", |b| {
            Encoder::new(b, &enc_strides, config.encoder_channels, config.embed_channels)
        });
        mark("encoder", &b, start, &mut groups);

        let start = b.len();
        let stem = b.scoped("decoder", |b| {
            Conv::pointwise(b, "stem", config.embed_channels, config.base_channels)
        });
        mark("stem", &b, start, &mut groups);

        let opts = WfubOptions {
            kernels: &config.fsfb_kernels,
            dilations: &config.fsfb_dilations,
            high_expansion: config.high_expansion,
            tgfn_expansion: config.tgfn_expansion,
            fsfb: config.ablation.fsfb,
            tgfn: config.ablation.tgfn,
        };
        let mut stages = Vec::new();
        let mut n_mod = 0;
        for spec in config.stages() {
            let start = b.len();
            b.push_scope("decoder");
            b.push_scope(format!("stage{}", spec.index));
            let nerv = b.scoped("nerv", |b| {
                NervBlock::new(b, spec.in_channels, spec.out_channels, spec.stride, config.nerv_kernel)
            });
            let wfub = spec
                .has_wfub
                .then(|| b.scoped("wfub", |b| Wfub::new(b, spec.out_channels, spec.in_channels, &opts)));
            b.pop_scope();
            b.pop_scope();
            let modulation = (spec.has_wfub && config.ablation.tgfn).then(|| {
                n_mod += 1;
                n_mod - 1
            });
            mark(&format!("stage{}", spec.index), &b, start, &mut groups);
            stages.push(Stage {
                spec,
                nerv,
                wfub,
                modulation,
            });
        }

        let final_ch = config.final_channels();
        let start = b.len();
        let creb = (config.ablation.creb && config.creb_count > 0)
            .then(|| b.scoped("decoder", |b| b.scoped("creb", |b| Creb::new(b, final_ch, config.creb_count))));
        mark("creb", &b, start, &mut groups);

        let start = b.len();
        let head = b.scoped("decoder", |b| {
            Conv::new(b, "head", final_ch, 3, ConvGeometry::same(3, 1))
        });
        mark("head", &b, start, &mut groups);

        let start = b.len();
        let mod_channels: Vec<usize> = config.modulated_stages().iter().map(|s| s.out_channels).collect();
        let temporal = (!mod_channels.is_empty()).then(|| {
            b.scoped("temporal", |b| {
                TemporalNet::new(b, config.pe_frequencies, config.temporal_hidden, &mod_channels)
            })
        });
        mark("temporal", &b, start, &mut groups);

        Ok(Self {
            config,
            encoder,
            stem,
            stages,
            creb,
            head,
            temporal,
            specs: b.finish(),
            groups,
        })
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Parameter indices of the encoder; everything after it is decoder side.
    pub fn encoder_range(&self) -> Range<usize> {
        self.groups[0].range.clone()
    }

    pub fn decoder_range(&self) -> Range<usize> {
        self.groups[0].range.end..self.specs.len()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamStore::init(&self.specs, &mut rng)
    }

    /// Per-block parameter counts of the decoder side in forward order
    /// (stem, stages, tail, head, temporal network).
    pub fn param_distribution(&self) -> Vec<(String, usize)> {
        self.groups[1..]
            .iter()
            .map(|grp| {
                let n = self.specs[grp.range.clone()].iter().map(ParamSpec::numel).sum();
                (grp.label.clone(), n)
            })
            .collect()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.specs[self.decoder_range()].iter().map(ParamSpec::numel).sum()
    }

    /// `[d, H/S, W/S]`.
    pub fn embedding_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        self.config.check_frame(height, width)?;
        let s = self.config.total_stride();
        Ok([self.config.embed_channels, height / s, width / s])
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, frame: Var) -> Result<Var> {
        let shape = g.value(frame).shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape(format!("frame must be [3, h, w], got {shape:?}")));
        }
        self.config.check_frame(shape[1], shape[2])?;
        Ok(self.encoder.forward(g, p, frame))
    }

    pub fn modulations<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, t_norm: f64) -> Result<Vec<Modulation>> {
        match &self.temporal {
            Some(net) => net.forward(g, p, t_norm),
            None => {
                positional_encoding(t_norm, self.config.pe_frequencies)?;
                Ok(Vec::new())
            }
        }
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, embedding: Var, t_norm: f64) -> Result<Var> {
        self.decode_traced(g, p, embedding, t_norm).map(|(out, _)| out)
    }

    pub fn decode_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        embedding: Var,
        t_norm: f64,
    ) -> Result<(Var, DecoderState)> {
        let shape = g.value(embedding).shape().to_vec();
        if shape.len() != 3 || shape[0] != self.config.embed_channels {
            return Err(Error::shape(format!(
                "embedding must be [{}, h, w], got {shape:?}",
                self.config.embed_channels
            )));
        }
        let mods = self.modulations(g, p, t_norm)?;
        let mut state = DecoderState::default();
        let mut x = self.stem.forward(g, p, embedding);
        for stage in &self.stages {
            let (_, h, w) = g.value(x).chw();
            state.stage_inputs.push(x);
            let f = stage.nerv.forward(g, p, x);
            let f = match &stage.wfub {
                Some(wfub) => wfub.forward(g, p, f, x, stage.modulation.map(|i| &mods[i]))?,
                None => f,
            };
            let s = stage.spec.stride;
            assert_eq!(
                g.value(f).shape(),
                [stage.spec.out_channels, h * s, w * s],
                "stage {} shape drift",
                stage.spec.index
            );
            state.stage_outputs.push(f);
            x = f;
        }
        if let Some(creb) = &self.creb {
            x = creb.forward(g, p, x);
        }
        Ok((self.head.forward(g, p, x), state))
    }

    /// Encode then decode; the output is unclamped.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, frame: Var, t_norm: f64) -> Result<Var> {
        let e = self.encode(g, p, frame)?;
        self.decode(g, p, e, t_norm)
    }

    /// Content embedding of one frame, without gradient tracking.
    pub fn embed<T: Scalar>(&self, params: &ParamStore<T>, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind_range(&mut g, self.encoder_range(), false);
        let x = g.constant(frame.clone());
        let e = self.encode(&mut g, &p, x)?;
        Ok(g.value(e).clone())
    }

    /// Decodes an embedding and clamps to `[0, 1]`.
    pub fn decode_frame<T: Scalar>(&self, params: &ParamStore<T>, embedding: &Tensor<T>, t_norm: f64) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind_range(&mut g, self.decoder_range(), false);
        let e = g.constant(embedding.clone());
        let out = self.decode(&mut g, &p, e, t_norm)?;
        Ok(g.value(out).map(|v| v.max(T::zero()).min(T::one())))
    }

    /// Evaluation-mode reconstruction: encode, decode, clamp.
    pub fn reconstruct(&self, params: &ParamStore<f32>, frame: &Frame, t_norm: f64) -> Result<Frame> {
        let e = self.embed(params, frame)?;
        self.decode_frame(params, &e, t_norm)
    }

    /// Sets every refinement block to the identity map.
    pub fn zero_refinement_outputs<T: Scalar>(&self, params: &mut ParamStore<T>) {
        for stage in &self.stages {
            if let Some(w) = &stage.wfub {
                w.zero_refinement_outputs(params);
            }
        }
    }
}
