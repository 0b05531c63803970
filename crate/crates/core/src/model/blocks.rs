//! Decoder building blocks: upsampling, the wavelet refinement block and its
//! branches, the gated feed-forward network, and the residual tail.

use fanerv_autograd::{ConvGeometry, Graph, Var};

use super::params::{Bound, Conv, DwConv, ParamBuilder, ParamStore};
use crate::error::{Error, Result};
use crate::frequency::{dwt, idwt};
use crate::Scalar;

/// Temporal affine parameters for one stage, as graph values of length `c`.
#[derive(Clone, Copy, Debug)]
pub struct Modulation {
    pub gamma: Var,
    pub beta: Var,
}

/// Convolution to `out * stride^2` channels, sub-pixel rearrangement, GELU.
#[derive(Clone, Debug)]
pub struct NervBlock {
    pub conv: Conv,
    pub stride: usize,
}

impl NervBlock {
    pub fn new(b: &mut ParamBuilder, in_channels: usize, out_channels: usize, stride: usize, kernel: usize) -> Self {
        let conv = Conv::new(
            b,
            "conv",
            in_channels,
            out_channels * stride * stride,
            ConvGeometry::same(kernel, 1),
        );
        Self { conv, stride }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = self.conv.forward(g, p, x);
        let y = g.pixel_shuffle(y, self.stride);
        g.gelu(y)
    }
}

/// Multi-resolution dilated depthwise modulation of the low-frequency path.
#[derive(Clone, Debug)]
pub struct LowBranch {
    pub scales: Vec<DwConv>,
    pub attention: Conv,
    pub proj: Conv,
}

impl LowBranch {
    pub fn new(b: &mut ParamBuilder, channels: usize, kernels: &[usize], dilations: &[usize]) -> Self {
        let scales = kernels
            .iter()
            .zip(dilations)
            .enumerate()
            .map(|(j, (&k, &d))| DwConv::new(b, &format!("dw{j}"), channels, k, d))
            .collect::<Vec<_>>();
        let attention = Conv::pointwise(b, "attention", channels * scales.len(), channels);
        let proj = Conv::pointwise(b, "proj", channels, channels);
        Self {
            scales,
            attention,
            proj,
        }
    }

    /// Per-scale depthwise responses `f_l^j`.
    pub fn scale_maps<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Vec<Var> {
        self.scales.iter().map(|dw| dw.forward(g, p, x)).collect()
    }

    /// `S (.) x` before the output projection.
    pub fn modulated<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let maps = self.scale_maps(g, p, x);
        let cat = g.concat_channels(&maps);
        let s = self.attention.forward(g, p, cat);
        let s = g.gelu(s);
        g.mul(s, x)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let m = self.modulated(g, p, x);
        self.proj.forward(g, p, m)
    }
}

/// Small-kernel residual branch of the high-frequency path.
#[derive(Clone, Debug)]
pub struct HighBranch {
    pub dw: DwConv,
    pub expand: Conv,
    pub proj: Conv,
}

impl HighBranch {
    pub fn new(b: &mut ParamBuilder, channels: usize, expansion: usize) -> Self {
        Self {
            dw: DwConv::new(b, "dw", channels, 3, 1),
            expand: Conv::pointwise(b, "expand", channels, channels * expansion),
            proj: Conv::pointwise(b, "proj", channels * expansion, channels),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = self.dw.forward(g, p, x);
        let y = self.expand.forward(g, p, y);
        let y = g.gelu(y);
        let y = self.proj.forward(g, p, y);
        g.add(y, x)
    }
}

/// Time-modulated gated feed-forward network. The caller adds the residual.
#[derive(Clone, Debug)]
pub struct Tgfn {
    pub channels: usize,
    pub hidden: usize,
    pub proj_in: Conv,
    pub dw: DwConv,
    pub proj_out: Conv,
}

impl Tgfn {
    pub fn new(b: &mut ParamBuilder, channels: usize, expansion: usize) -> Self {
        let hidden = channels * expansion;
        Self {
            channels,
            hidden,
            proj_in: Conv::pointwise(b, "proj_in", channels, 2 * hidden),
            dw: DwConv::new(b, "dw", hidden, 3, 1),
            proj_out: Conv::pointwise(b, "proj_out", hidden, channels),
        }
    }

    fn check(&self, g: &Graph<impl Scalar>, x: Var, m: &Modulation) -> Result<()> {
        let c = g.value(x).chw().0;
        let (gl, bl) = (g.value(m.gamma).numel(), g.value(m.beta).numel());
        if c != self.channels || gl != c || bl != c {
            return Err(Error::shape(format!(
                "tgfn over {} channels got input with {c}, gamma {gl}, beta {bl}",
                self.channels
            )));
        }
        Ok(())
    }

    /// `x (.) (1 + gamma) + beta`.
    pub fn modulate<T: Scalar>(&self, g: &mut Graph<T>, x: Var, m: &Modulation) -> Result<Var> {
        self.check(g, x, m)?;
        Ok(g.modulate(x, m.gamma, m.beta))
    }

    /// `f_x (.) GELU(DWConv(f_a))` before the output projection.
    pub fn gated<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, m: &Modulation) -> Result<Var> {
        let xm = self.modulate(g, x, m)?;
        let h = self.proj_in.forward(g, p, xm);
        let fa = g.slice_channels(h, 0, self.hidden);
        let fx = g.slice_channels(h, self.hidden, self.hidden);
        let gate = self.dw.forward(g, p, fa);
        let gate = g.gelu(gate);
        Ok(g.mul(fx, gate))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, m: &Modulation) -> Result<Var> {
        let gated = self.gated(g, p, x, m)?;
        Ok(self.proj_out.forward(g, p, gated))
    }
}

/// Wavelet refinement block applied after a stride-2 upsampling stage.
#[derive(Clone, Debug)]
pub struct Wfub {
    pub channels: usize,
    pub prev_channels: usize,
    pub low_fuse: Conv,
    pub high_fuse: Conv,
    pub low: Option<LowBranch>,
    pub high: Option<HighBranch>,
    pub tgfn: Option<Tgfn>,
}

/// Construction knobs shared by every refinement block of a model.
#[derive(Clone, Debug)]
pub struct WfubOptions<'a> {
    pub kernels: &'a [usize],
    pub dilations: &'a [usize],
    pub high_expansion: usize,
    pub tgfn_expansion: usize,
    pub fsfb: bool,
    pub tgfn: bool,
}

impl Wfub {
    pub fn new(b: &mut ParamBuilder, channels: usize, prev_channels: usize, opts: &WfubOptions<'_>) -> Self {
        let low_fuse = Conv::pointwise(b, "low_fuse", channels + prev_channels, channels);
        let high_fuse = Conv::pointwise(b, "high_fuse", 3 * channels, 3 * channels);
        let (low, high) = if opts.fsfb {
            (
                Some(b.scoped("low", |b| LowBranch::new(b, channels, opts.kernels, opts.dilations))),
                Some(b.scoped("high", |b| HighBranch::new(b, 3 * channels, opts.high_expansion))),
            )
        } else {
            (None, None)
        };
        let tgfn = opts
            .tgfn
            .then(|| b.scoped("tgfn", |b| Tgfn::new(b, channels, opts.tgfn_expansion)));
        Self {
            channels,
            prev_channels,
            low_fuse,
            high_fuse,
            low,
            high,
            tgfn,
        }
    }

    /// `f`: `[c, h, w]` with even `h, w`; `f_prev`: the stage input,
    /// `[c_prev, h/2, w/2]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f: Var,
        f_prev: Var,
        m: Option<&Modulation>,
    ) -> Result<Var> {
        let (c, h, w) = g.value(f).chw();
        let (cp, ph, pw) = g.value(f_prev).chw();
        if c != self.channels || cp != self.prev_channels {
            return Err(Error::shape(format!(
                "wfub expects {}+{} channels, got {c}+{cp}",
                self.channels, self.prev_channels
            )));
        }
        if h % 2 != 0 || w % 2 != 0 || (ph * 2, pw * 2) != (h, w) {
            return Err(Error::shape(format!(
                "wfub alignment: feature {h}x{w} needs an even size and a previous-stage map of half that, got {ph}x{pw}"
            )));
        }

        let bands = dwt(g, f)?;
        let a_ll = g.slice_channels(bands, 0, c);
        let details = g.slice_channels(bands, c, 3 * c);

        let low_in = g.concat_channels(&[a_ll, f_prev]);
        let low = self.low_fuse.forward(g, p, low_in);
        let low = match &self.low {
            Some(branch) => branch.forward(g, p, low),
            None => low,
        };
        let high = self.high_fuse.forward(g, p, details);
        let high = match &self.high {
            Some(branch) => branch.forward(g, p, high),
            None => high,
        };
        // the 3c high-frequency channels split back into lr, rl, rr in order
        let merged = g.concat_channels(&[low, high]);
        let refined = idwt(g, merged)?;
        let fused = g.add(refined, f);

        match &self.tgfn {
            Some(tgfn) => {
                let m = m.ok_or_else(|| Error::shape("wfub with tgfn needs modulation parameters"))?;
                let t = tgfn.forward(g, p, fused, m)?;
                Ok(g.add(t, fused))
            }
            None => Ok(fused),
        }
    }

    /// Zeroes every projection that feeds a residual sum, after which the
    /// block is the identity map.
    pub fn zero_refinement_outputs<T: Scalar>(&self, params: &mut ParamStore<T>) {
        match &self.low {
            Some(low) => low.proj.zero(params),
            None => self.low_fuse.zero(params),
        }
        self.high_fuse.zero(params);
        if let Some(high) = &self.high {
            high.proj.zero(params);
        }
        if let Some(t) = &self.tgfn {
            t.proj_out.zero(params);
        }
    }
}

/// Stack of full-resolution residual units `x + conv(GELU(conv(x)))`.
#[derive(Clone, Debug)]
pub struct Creb {
    pub units: Vec<(Conv, Conv)>,
}

impl Creb {
    pub fn new(b: &mut ParamBuilder, channels: usize, count: usize) -> Self {
        let units = (0..count)
            .map(|i| {
                b.scoped(format!("unit{i}"), |b| {
                    (
                        Conv::new(b, "conv1", channels, channels, ConvGeometry::same(3, 1)),
                        Conv::new(b, "conv2", channels, channels, ConvGeometry::same(3, 1)),
                    )
                })
            })
            .collect();
        Self { units }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, mut x: Var) -> Var {
        for (c1, c2) in &self.units {
            let y = c1.forward(g, p, x);
            let y = g.gelu(y);
            let y = c2.forward(g, p, y);
            x = g.add(x, y);
        }
        x
    }
}
