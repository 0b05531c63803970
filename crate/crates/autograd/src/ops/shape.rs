use crate::{Graph, Real, Tensor, Var};

/// Sub-pixel rearrangement `[c*s*s, h, w] -> [c, h*s, w*s]`, channel order
/// `c*s*s + i*s + j` feeding output offset `(i, j)` inside each `s x s` cell.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let (cin, h, w) = x.chw();
    assert!(s >= 1 && cin % (s * s) == 0, "pixel_shuffle: {cin} channels, stride {s}");
    let c = cin / (s * s);
    let (oh, ow) = (h * s, w * s);
    let src = x.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let plane = &src[((ch * s + i) * s + j) * h * w..][..h * w];
                for y in 0..h {
                    let row = &mut dst[(ch * oh + y * s + i) * ow..][..ow];
                    for (x, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                        row[x * s + j] = v;
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let (c, oh, ow) = x.chw();
    assert!(s >= 1 && oh % s == 0 && ow % s == 0, "pixel_unshuffle: {oh}x{ow}, stride {s}");
    let (h, w) = (oh / s, ow / s);
    let src = x.data();
    let mut out = Tensor::zeros(&[c * s * s, h, w]);
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let plane = &mut dst[((ch * s + i) * s + j) * h * w..][..h * w];
                for y in 0..h {
                    let row = &src[(ch * oh + y * s + i) * ow..][..ow];
                    for (x, v) in plane[y * w..(y + 1) * w].iter_mut().enumerate() {
                        *v = row[x * s + j];
                    }
                }
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Var {
        let out = pixel_shuffle(self.value(x), s);
        self.op(out, &[x], move |ctx| vec![Some(pixel_unshuffle(ctx.grad, s))])
    }

    /// Stacks `[c_i, h, w]` maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_channels: nothing to concatenate");
        let (_, h, w) = self.value(parts[0]).chw();
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat_channels: spatial size mismatch");
            sizes.push(c);
            data.extend_from_slice(self.value(p).data());
        }
        let total: usize = sizes.iter().sum();
        let out = Tensor::from_vec(&[total, h, w], data);
        self.op(out, parts, move |ctx| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(&ctx.needs)
                .map(|(&c, &need)| {
                    let start = offset * h * w;
                    offset += c;
                    need.then(|| {
                        Tensor::from_vec(&[c, h, w], ctx.grad.data()[start..start + c * h * w].to_vec())
                    })
                })
                .collect()
        })
    }

    /// Channels `start..start + len` of a `[c, h, w]` map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(start + len <= c, "slice_channels: {start}+{len} > {c}");
        let hw = h * w;
        let out = Tensor::from_vec(
            &[len, h, w],
            self.value(x).data()[start * hw..(start + len) * hw].to_vec(),
        );
        self.op(out, &[x], move |ctx| {
            let mut g = Tensor::zeros(&[c, h, w]);
            g.data_mut()[start * hw..(start + len) * hw].copy_from_slice(ctx.grad.data());
            vec![Some(g)]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.op(out, &[x], |ctx| {
            vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape()))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_places_channels_in_cells() {
        // 4 channels of a 1x1 map become one 2x2 cell.
        let x = Tensor::from_vec(&[4, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0]);
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_round_trip_is_exact() {
        let x = Tensor::from_fn(&[18, 2, 3], |i| i as f64 * 0.37 - 4.0);
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&x, 3), 3), x);
    }
}
