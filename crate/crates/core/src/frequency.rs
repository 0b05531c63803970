//! Orthonormal 2-D Haar analysis/synthesis and 2-D Fourier transforms on
//! feature maps, plus their graph operations.
//!
//! For every non-overlapping `2 x 2` block `[a b; c d]` of a channel the
//! analysis produces
//!
//! ```text
//! ll = (a + b + c + d) / 2     lr = (a - b + c - d) / 2
//! rl = (a + b - c - d) / 2     rr = (a - b - c + d) / 2
//! ```
//!
//! The 4x4 block matrix is symmetric and orthogonal, so synthesis applies the
//! same matrix and the backward pass of either direction is the other
//! direction applied to the incoming gradient.

use fanerv_autograd::{Graph, Tensor, Var};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::Scalar;

/// Real feature map, `[channels, height, width]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T: Scalar> {
    tensor: Tensor<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(Error::shape(format!(
                "feature map must be [c, h, w], got {:?}",
                tensor.shape()
            )));
        }
        let (c, h, w) = tensor.chw();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("empty feature map {c}x{h}x{w}")));
        }
        if !tensor.all_finite() {
            return Err(Error::Domain("feature map contains non-finite values".into()));
        }
        Ok(Self { tensor })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            tensor: Tensor::zeros(&[channels, height, width]),
        }
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.tensor.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }
}

/// The four half-resolution Haar subbands of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T: Scalar> {
    pub a_ll: FeatureMap<T>,
    pub h_lr: FeatureMap<T>,
    pub v_rl: FeatureMap<T>,
    pub d_rr: FeatureMap<T>,
}

impl<T: Scalar> SubbandSet<T> {
    pub fn new(
        a_ll: FeatureMap<T>,
        h_lr: FeatureMap<T>,
        v_rl: FeatureMap<T>,
        d_rr: FeatureMap<T>,
    ) -> Result<Self> {
        let s = a_ll.tensor.shape();
        for (name, band) in [("h_lr", &h_lr), ("v_rl", &v_rl), ("d_rr", &d_rr)] {
            if band.tensor.shape() != s {
                return Err(Error::shape(format!(
                    "subband {name} has shape {:?}, a_ll has {s:?}",
                    band.tensor.shape()
                )));
            }
        }
        Ok(Self {
            a_ll,
            h_lr,
            v_rl,
            d_rr,
        })
    }

    /// Stacks the bands along channels in `ll, lr, rl, rr` order.
    pub fn stacked(&self) -> Tensor<T> {
        let (c, h, w) = self.a_ll.tensor.chw();
        let mut data = Vec::with_capacity(4 * c * h * w);
        for band in [&self.a_ll, &self.h_lr, &self.v_rl, &self.d_rr] {
            data.extend_from_slice(band.tensor.data());
        }
        Tensor::from_vec(&[4 * c, h, w], data)
    }

    fn from_stacked(t: Tensor<T>) -> Self {
        let (c4, h, w) = t.chw();
        let c = c4 / 4;
        let band = |i: usize| FeatureMap {
            tensor: Tensor::from_vec(&[c, h, w], t.data()[i * c * h * w..(i + 1) * c * h * w].to_vec()),
        };
        Self {
            a_ll: band(0),
            h_lr: band(1),
            v_rl: band(2),
            d_rr: band(3),
        }
    }
}

/// Analysis of a `[c, h, w]` tensor into `[4c, h/2, w/2]`, bands stacked
/// `ll, lr, rl, rr`. Even `h` and `w` are the caller's responsibility.
pub(crate) fn dwt_stacked<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let band = c * oh * ow;
    let half = T::of(0.5);
    let src = x.data();
    let mut out = Tensor::zeros(&[4 * c, oh, ow]);
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            let top = &src[(ch * h + 2 * y) * w..][..w];
            let bot = &src[(ch * h + 2 * y + 1) * w..][..w];
            let o = (ch * oh + y) * ow;
            for xx in 0..ow {
                let (a, b, cc, d) = (top[2 * xx], top[2 * xx + 1], bot[2 * xx], bot[2 * xx + 1]);
                dst[o + xx] = (a + b + cc + d) * half;
                dst[band + o + xx] = (a - b + cc - d) * half;
                dst[2 * band + o + xx] = (a + b - cc - d) * half;
                dst[3 * band + o + xx] = (a - b - cc + d) * half;
            }
        }
    }
    out
}

/// Synthesis of stacked `[4c, h, w]` bands into `[c, 2h, 2w]`.
pub(crate) fn idwt_stacked<T: Scalar>(s: &Tensor<T>) -> Tensor<T> {
    let (c4, h, w) = s.chw();
    debug_assert!(c4 % 4 == 0);
    let c = c4 / 4;
    let band = c * h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let half = T::of(0.5);
    let src = s.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let i = (ch * h + y) * w;
            let (top, bot) = dst[(ch * oh + 2 * y) * ow..][..2 * ow].split_at_mut(ow);
            for xx in 0..w {
                let (ll, lr, rl, rr) = (src[i + xx], src[band + i + xx], src[2 * band + i + xx], src[3 * band + i + xx]);
                top[2 * xx] = (ll + lr + rl + rr) * half;
                top[2 * xx + 1] = (ll - lr + rl - rr) * half;
                bot[2 * xx] = (ll + lr - rl - rr) * half;
                bot[2 * xx + 1] = (ll - lr - rl + rr) * half;
            }
        }
    }
    out
}

pub fn haar_dwt2d<T: Scalar>(f: &FeatureMap<T>) -> Result<SubbandSet<T>> {
    if f.height() % 2 != 0 || f.width() % 2 != 0 {
        return Err(Error::shape(format!(
            "haar_dwt2d needs even spatial dims, got {}x{}",
            f.height(),
            f.width()
        )));
    }
    Ok(SubbandSet::from_stacked(dwt_stacked(&f.tensor)))
}

pub fn haar_idwt2d<T: Scalar>(s: &SubbandSet<T>) -> Result<FeatureMap<T>> {
    // re-validate in case the fields were replaced after construction
    let s = SubbandSet::new(s.a_ll.clone(), s.h_lr.clone(), s.v_rl.clone(), s.d_rr.clone())?;
    Ok(FeatureMap {
        tensor: idwt_stacked(&s.stacked()),
    })
}

/// Graph op: `[c, h, w] -> [4c, h/2, w/2]`, bands stacked `ll, lr, rl, rr`.
pub fn dwt<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (_, h, w) = g.value(x).chw();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("dwt needs even spatial dims, got {h}x{w}")));
    }
    let out = dwt_stacked(g.value(x));
    Ok(g.op(out, &[x], |ctx| vec![Some(idwt_stacked(ctx.grad))]))
}

/// Graph op: stacked `[4c, h, w]` bands to `[c, 2h, 2w]`.
pub fn idwt<T: Scalar>(g: &mut Graph<T>, bands: Var) -> Result<Var> {
    let (c4, _, _) = g.value(bands).chw();
    if c4 % 4 != 0 {
        return Err(Error::shape(format!("idwt needs 4k stacked channels, got {c4}")));
    }
    let out = idwt_stacked(g.value(bands));
    Ok(g.op(out, &[bands], |ctx| vec![Some(dwt_stacked(ctx.grad))]))
}

/// Per-channel 2-D DFT, unnormalized, DC at `(0, 0)`.
#[derive(Clone, Debug)]
pub struct Spectrum<T: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn get(&self, c: usize, ky: usize, kx: usize) -> Complex<T> {
        self.bins[(c * self.height + ky) * self.width + kx]
    }
}

/// In-place 2-D forward transform of `channels` planes of `h x w`.
fn fft2d_in_place<T: Scalar>(buf: &mut [Complex<T>], h: usize, w: usize) {
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft_forward(w);
    row_fft.process(buf);
    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in buf.chunks_mut(h * w) {
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col_fft.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}

fn fft2d_tensor<T: Scalar>(x: &Tensor<T>) -> Spectrum<T> {
    let (c, h, w) = x.chw();
    let mut bins: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2d_in_place(&mut bins, h, w);
    Spectrum {
        channels: c,
        height: h,
        width: w,
        bins,
    }
}

pub fn fft2d<T: Scalar>(f: &FeatureMap<T>) -> Spectrum<T> {
    fft2d_tensor(&f.tensor)
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Graph op: `mean(|Re D| + |Im D|)` over every bin of every channel, where
/// `D = F(pred) - F(target)`. Only `pred` receives a gradient.
pub fn spectral_l1<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::shape(format!(
            "spectral_l1: pred {:?} vs target {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    // the transform is linear, so one FFT of the difference suffices
    let diff = g.value(pred).zip_map(g.value(target), |a, b| a - b);
    let spec = fft2d_tensor(&diff);
    let n = T::of(spec.bins.len() as f64);
    let total: T = spec.bins.iter().map(|z| z.re.abs() + z.im.abs()).sum();
    let signs: Vec<Complex<T>> = spec
        .bins
        .iter()
        .map(|z| Complex::new(sign(z.re), -sign(z.im)))
        .collect();
    let (_, h, w) = diff.chw();
    let shape = diff.shape().to_vec();
    Ok(g.op(Tensor::scalar(total / n), &[pred, target], move |ctx| {
        // d/dx sum(|Re Fx| + |Im Fx|) = Re F(sign(Re) - i sign(Im)) for symmetric F
        let mut buf = signs.clone();
        fft2d_in_place(&mut buf, h, w);
        let scale = ctx.grad.item() / n;
        let gp = Tensor::from_vec(&shape, buf.iter().map(|z| z.re * scale).collect());
        vec![ctx.needs[0].then_some(gp), None]
    }))
}
