use fanerv_autograd::{ConvGeometry, Graph, Var};

use super::params::{Bound, Conv, DwConv, Init, ParamBuilder, ParamId};
use crate::Scalar;

const LAYER_SCALE_INIT: f64 = 1e-6;

/// Depthwise 7x7, pointwise expand x4, GELU, pointwise contract, layer scale,
/// residual.
#[derive(Clone, Debug)]
pub struct ConvNextBlock {
    pub dw: DwConv,
    pub expand: Conv,
    pub contract: Conv,
    pub gamma: ParamId,
}

impl ConvNextBlock {
    pub fn new(b: &mut ParamBuilder, channels: usize) -> Self {
        Self {
            dw: DwConv::new(b, "dw", channels, 7, 1),
            expand: Conv::pointwise(b, "expand", channels, 4 * channels),
            contract: Conv::pointwise(b, "contract", 4 * channels, channels),
            gamma: b.declare("gamma", &[channels], Init::Constant(LAYER_SCALE_INIT)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = self.dw.forward(g, p, x);
        let y = self.expand.forward(g, p, y);
        let y = g.gelu(y);
        let y = self.contract.forward(g, p, y);
        let y = g.scale_channels(y, p.var(self.gamma));
        g.add(x, y)
    }
}

/// Frame to content embedding: one patchify downsampling conv and one
/// ConvNext block per stride, then a 1x1 projection to the embedding width.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<(Conv, ConvNextBlock)>,
    pub proj: Conv,
}

impl Encoder {
    /// `strides` in encoder order (the decoder strides reversed).
    pub fn new(b: &mut ParamBuilder, strides: &[usize], channels: usize, embed_channels: usize) -> Self {
        let mut in_ch = 3;
        let stages = strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let stage = b.scoped(format!("stage{i}"), |b| {
                    (
                        Conv::new(b, "down", in_ch, channels, ConvGeometry::patchify(s)),
                        b.scoped("block", |b| ConvNextBlock::new(b, channels)),
                    )
                });
                in_ch = channels;
                stage
            })
            .collect();
        let proj = Conv::pointwise(b, "proj", in_ch, embed_channels);
        Self { stages, proj }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, frame: Var) -> Var {
        let mut x = frame;
        for (down, block) in &self.stages {
            x = down.forward(g, p, x);
            x = block.forward(g, p, x);
        }
        self.proj.forward(g, p, x)
    }
}
