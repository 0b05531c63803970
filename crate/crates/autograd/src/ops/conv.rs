//! Dense and depthwise 2-D convolutions over `[c, h, w]` maps.

use crate::{Graph, Real, Tensor, Var};

/// Square-kernel convolution geometry with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// Stride-1 geometry that keeps the spatial size (odd kernels only).
    pub fn same(kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel, got {kernel}");
        Self {
            kernel,
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    /// Non-overlapping `k x k` patches with stride `k`.
    pub fn patchify(kernel: usize) -> Self {
        Self {
            kernel,
            stride: kernel,
            padding: 0,
            dilation: 1,
        }
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let dim = |n: usize| {
            let padded = n + 2 * self.padding;
            assert!(padded >= span, "conv: input {n} too small for span {span}");
            (padded - span) / self.stride + 1
        };
        (dim(h), dim(w))
    }

    /// Number of input pixels along one axis that can influence one output.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Column range `[lo, hi)` of output positions whose input index
/// `o * stride + off` lies in `[0, n)`.
#[inline]
fn valid_range(out_len: usize, stride: usize, off: isize, n: usize) -> (usize, usize) {
    let s = stride as isize;
    // smallest o with o*s + off >= 0
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    // largest o with o*s + off <= n-1
    let last = n as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = lo.clamp(0, out_len as isize) as usize;
    let hi = hi.clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

fn im2col<T: Real>(x: &Tensor<T>, geo: ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let (cin, h, w) = x.chw();
    let k = geo.kernel;
    let n = oh * ow;
    let mut col = vec![T::zero(); cin * k * k * n];
    let src = x.data();
    for ci in 0..cin {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let off_y = (ky * geo.dilation) as isize - geo.padding as isize;
            let (y0, y1) = valid_range(oh, geo.stride, off_y, h);
            for kx in 0..k {
                let off_x = (kx * geo.dilation) as isize - geo.padding as isize;
                let (x0, x1) = valid_range(ow, geo.stride, off_x, w);
                let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                for oy in y0..y1 {
                    let iy = (oy * geo.stride) as isize + off_y;
                    let src_row = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    if geo.stride == 1 {
                        let ix0 = (x0 as isize + off_x) as usize;
                        dst[x0..x1].copy_from_slice(&src_row[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            dst[ox] = src_row[((ox * geo.stride) as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(
    col: &[T],
    geo: ConvGeometry,
    (cin, h, w): (usize, usize, usize),
    oh: usize,
    ow: usize,
) -> Tensor<T> {
    let k = geo.kernel;
    let n = oh * ow;
    let mut out = Tensor::zeros(&[cin, h, w]);
    let dst_all = out.data_mut();
    for ci in 0..cin {
        let plane = &mut dst_all[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let off_y = (ky * geo.dilation) as isize - geo.padding as isize;
            let (y0, y1) = valid_range(oh, geo.stride, off_y, h);
            for kx in 0..k {
                let off_x = (kx * geo.dilation) as isize - geo.padding as isize;
                let (x0, x1) = valid_range(ow, geo.stride, off_x, w);
                let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                for oy in y0..y1 {
                    let iy = (oy * geo.stride) as isize + off_y;
                    let dst_row = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    for ox in x0..x1 {
                        dst_row[((ox * geo.stride) as isize + off_x) as usize] += src[ox];
                    }
                }
            }
        }
    }
    out
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, bias: &[T]) {
    let (_, h, w) = out.chw();
    for (plane, &b) in out.data_mut().chunks_mut(h * w).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let (c, h, w) = g.chw();
    Tensor::from_fn(&[c], |ch| g.data()[ch * h * w..(ch + 1) * h * w].iter().copied().sum())
        .reshape(shape)
}

/// Dense convolution `[cin, h, w] (*) [cout, cin, k, k] -> [cout, oh, ow]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geo: ConvGeometry,
) -> Tensor<T> {
    let (cin, h, w) = x.chw();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "conv2d: weight must be [cout, cin, k, k]");
    assert_eq!(ws[1], cin, "conv2d: weight expects {} input channels, got {cin}", ws[1]);
    assert_eq!((ws[2], ws[3]), (geo.kernel, geo.kernel), "conv2d: kernel size");
    let cout = ws[0];
    let (oh, ow) = geo.output_size(h, w);
    let n = oh * ow;
    let kdim = cin * geo.kernel * geo.kernel;
    let mut out = Tensor::zeros(&[cout, oh, ow]);
    let owned_col;
    let col: &[T] = if geo.is_pointwise() {
        x.data()
    } else {
        owned_col = im2col(x, geo, oh, ow);
        &owned_col
    };
    T::gemm(
        cout,
        kdim,
        n,
        T::one(),
        weight.data(),
        (kdim as isize, 1),
        col,
        (n as isize, 1),
        T::zero(),
        out.data_mut(),
        (n as isize, 1),
    );
    if let Some(b) = bias {
        assert_eq!(b.numel(), cout, "conv2d: bias length");
        add_channel_bias(&mut out, b.data());
    }
    out
}

/// Depthwise convolution with `same` padding: `[c, h, w] (*) [c, 1, k, k]`.
pub fn depthwise_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "depthwise: weight must be [c, 1, k, k]");
    assert_eq!((ws[0], ws[1]), (c, 1), "depthwise: weight {ws:?} for {c} channels");
    let k = ws[2];
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut out = Tensor::zeros(&[c, h, w]);
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data());
    }
    let src = x.data();
    let wt = weight.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let inp = &src[ch * h * w..(ch + 1) * h * w];
        let outp = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            let dy = (ky * dilation) as isize - pad;
            let (y0, y1) = valid_range(h, 1, dy, h);
            for kx in 0..k {
                let dx = (kx * dilation) as isize - pad;
                let (x0, x1) = valid_range(w, 1, dx, w);
                let wv = wt[(ch * k + ky) * k + kx];
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let iy = (y as isize + dy) as usize;
                    let s = &inp[iy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                    let d = &mut outp[y * w + x0..y * w + x1];
                    for (o, &v) in d.iter_mut().zip(s) {
                        *o += wv * v;
                    }
                }
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, geo: ConvGeometry) -> Var {
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            geo,
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.op(out, &parents, move |ctx| {
            let xin = ctx.inputs[0];
            let wt = ctx.inputs[1];
            let (cin, h, w) = xin.chw();
            let (cout, oh, ow) = ctx.grad.chw();
            let n = oh * ow;
            let kdim = cin * geo.kernel * geo.kernel;
            let g = ctx.grad.data();

            let gw = ctx.needs[1].then(|| {
                let owned_col;
                let col: &[T] = if geo.is_pointwise() {
                    xin.data()
                } else {
                    owned_col = im2col(xin, geo, oh, ow);
                    &owned_col
                };
                let mut gw = Tensor::zeros(wt.shape());
                T::gemm(
                    cout,
                    n,
                    kdim,
                    T::one(),
                    g,
                    (n as isize, 1),
                    col,
                    (1, n as isize),
                    T::zero(),
                    gw.data_mut(),
                    (kdim as isize, 1),
                );
                gw
            });
            let gx = ctx.needs[0].then(|| {
                let mut gcol = vec![T::zero(); kdim * n];
                T::gemm(
                    kdim,
                    cout,
                    n,
                    T::one(),
                    wt.data(),
                    (1, kdim as isize),
                    g,
                    (n as isize, 1),
                    T::zero(),
                    &mut gcol,
                    (n as isize, 1),
                );
                if geo.is_pointwise() {
                    Tensor::from_vec(&[cin, h, w], gcol)
                } else {
                    col2im(&gcol, geo, (cin, h, w), oh, ow)
                }
            });
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(ctx.grad, ctx.inputs[2].shape())));
            }
            grads
        })
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Var {
        let out = depthwise_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            dilation,
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.op(out, &parents, move |ctx| {
            let xin = ctx.inputs[0];
            let wt = ctx.inputs[1];
            let (c, h, w) = xin.chw();
            let k = wt.shape()[2];
            let pad = (dilation * (k - 1) / 2) as isize;
            let g = ctx.grad.data();
            let src = xin.data();
            let mut gx = ctx.needs[0].then(|| Tensor::zeros(&[c, h, w]));
            let mut gw = ctx.needs[1].then(|| Tensor::zeros(wt.shape()));
            for ch in 0..c {
                let gp = &g[ch * h * w..(ch + 1) * h * w];
                let inp = &src[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    let dy = (ky * dilation) as isize - pad;
                    let (y0, y1) = valid_range(h, 1, dy, h);
                    for kx in 0..k {
                        let dx = (kx * dilation) as isize - pad;
                        let (x0, x1) = valid_range(w, 1, dx, w);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = (ch * k + ky) * k + kx;
                        let wv = wt.data()[widx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let start = iy * w + (x0 as isize + dx) as usize;
                            let gs = &gp[y * w + x0..y * w + x1];
                            if gw.is_some() {
                                acc += gs
                                    .iter()
                                    .zip(&inp[start..start + (x1 - x0)])
                                    .map(|(&a, &b)| a * b)
                                    .sum::<T>();
                            }
                            if let Some(gx) = gx.as_mut() {
                                let d = &mut gx.data_mut()[ch * h * w + start..][..x1 - x0];
                                for (o, &v) in d.iter_mut().zip(gs) {
                                    *o += wv * v;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw.data_mut()[widx] = acc;
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(ctx.grad, ctx.inputs[2].shape())));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the reference.
    fn naive_conv(x: &Tensor<f64>, wt: &Tensor<f64>, geo: ConvGeometry) -> Tensor<f64> {
        let (cin, h, w) = x.chw();
        let cout = wt.shape()[0];
        let k = geo.kernel;
        let (oh, ow) = geo.output_size(h, w);
        Tensor::from_fn(&[cout, oh, ow], |i| {
            let co = i / (oh * ow);
            let oy = (i / ow) % oh;
            let ox = i % ow;
            let mut acc = 0.0;
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * geo.stride + ky * geo.dilation) as isize - geo.padding as isize;
                        let ix = (ox * geo.stride + kx * geo.dilation) as isize - geo.padding as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        acc += x.data()[(ci * h + iy as usize) * w + ix as usize]
                            * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                    }
                }
            }
            acc
        })
    }

    fn ramp(shape: &[usize], a: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 * a).sin() * 3.0).fract())
    }

    #[test]
    fn dense_conv_matches_naive() {
        let x = ramp(&[3, 7, 9], 0.71);
        for geo in [
            ConvGeometry::same(3, 1),
            ConvGeometry::same(3, 2),
            ConvGeometry::same(1, 1),
            ConvGeometry::patchify(2),
            ConvGeometry { kernel: 3, stride: 2, padding: 1, dilation: 1 },
        ] {
            let wt = ramp(&[4, 3, geo.kernel, geo.kernel], 1.3);
            let x = if geo.stride == 2 && geo.padding == 0 { ramp(&[3, 8, 10], 0.71) } else { x.clone() };
            let got = conv2d_forward(&x, &wt, None, geo);
            let want = naive_conv(&x, &wt, geo);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{geo:?}");
            }
        }
    }

    #[test]
    fn depthwise_matches_dense_with_diagonal_weights() {
        let c = 3;
        let x = ramp(&[c, 6, 11], 0.37);
        for (k, d) in [(3, 1), (5, 1), (7, 2), (11, 4)] {
            let dw = ramp(&[c, 1, k, k], 0.9);
            let dense = Tensor::from_fn(&[c, c, k, k], |i| {
                let co = i / (c * k * k);
                let ci = (i / (k * k)) % c;
                if co == ci {
                    dw.data()[co * k * k + i % (k * k)]
                } else {
                    0.0
                }
            });
            let got = depthwise_forward(&x, &dw, None, d);
            let want = naive_conv(&x, &dense, ConvGeometry::same(k, d));
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn valid_range_bounds() {
        assert_eq!(valid_range(5, 1, -2, 5), (2, 5));
        assert_eq!(valid_range(5, 1, 2, 5), (0, 3));
        assert_eq!(valid_range(4, 2, -1, 8), (1, 4));
        assert_eq!(valid_range(3, 1, 10, 3), (0, 0));
    }
}
