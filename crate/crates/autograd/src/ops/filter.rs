use crate::{Graph, Real, Tensor, Var};

fn horizontal_valid<T: Real>(x: &[T], (c, h, w): (usize, usize, usize), taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let ow = w + 1 - k;
    let mut out = vec![T::zero(); c * h * ow];
    for (src, dst) in x.chunks(w).zip(out.chunks_mut(ow)) {
        for (t, &tap) in taps.iter().enumerate() {
            for (o, &v) in dst.iter_mut().zip(&src[t..t + ow]) {
                *o += tap * v;
            }
        }
    }
    out
}

fn horizontal_adjoint<T: Real>(g: &[T], (c, h, w): (usize, usize, usize), taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let ow = w + 1 - k;
    let mut out = vec![T::zero(); c * h * w];
    for (src, dst) in g.chunks(ow).zip(out.chunks_mut(w)) {
        for (t, &tap) in taps.iter().enumerate() {
            for (o, &v) in dst[t..t + ow].iter_mut().zip(src) {
                *o += tap * v;
            }
        }
    }
    out
}

fn vertical_valid<T: Real>(x: &[T], (c, h, w): (usize, usize, usize), taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let oh = h + 1 - k;
    let mut out = vec![T::zero(); c * oh * w];
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(oh * w)) {
        for y in 0..oh {
            let row = &mut dst[y * w..(y + 1) * w];
            for (t, &tap) in taps.iter().enumerate() {
                for (o, &v) in row.iter_mut().zip(&src[(y + t) * w..(y + t + 1) * w]) {
                    *o += tap * v;
                }
            }
        }
    }
    out
}

fn vertical_adjoint<T: Real>(g: &[T], (c, h, w): (usize, usize, usize), taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let oh = h + 1 - k;
    let mut out = vec![T::zero(); c * h * w];
    for (src, dst) in g.chunks(oh * w).zip(out.chunks_mut(h * w)) {
        for y in 0..oh {
            let row = &src[y * w..(y + 1) * w];
            for (t, &tap) in taps.iter().enumerate() {
                for (o, &v) in dst[(y + t) * w..(y + t + 1) * w].iter_mut().zip(row) {
                    *o += tap * v;
                }
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    /// Separable filter with the same 1-D `taps` along both axes, no padding:
    /// `[c, h, w] -> [c, h - k + 1, w - k + 1]`.
    pub fn separable_filter_valid(&mut self, x: Var, taps: &[T]) -> Var {
        let (c, h, w) = self.value(x).chw();
        let k = taps.len();
        assert!(k >= 1 && h >= k && w >= k, "filter of {k} taps on {h}x{w}");
        let taps = taps.to_vec();
        let ow = w + 1 - k;
        let oh = h + 1 - k;
        let tmp = horizontal_valid(self.value(x).data(), (c, h, w), &taps);
        let out = vertical_valid(&tmp, (c, h, ow), &taps);
        let out = Tensor::from_vec(&[c, oh, ow], out);
        self.op(out, &[x], move |ctx| {
            let gv = vertical_adjoint(ctx.grad.data(), (c, h, ow), &taps);
            let gx = horizontal_adjoint(&gv, (c, h, w), &taps);
            vec![Some(Tensor::from_vec(&[c, h, w], gx))]
        })
    }

    /// 2x2 average pooling, stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (oh, ow) = (h / 2, w / 2);
        assert!(oh > 0 && ow > 0, "avg_pool2 on {h}x{w}");
        let quarter = T::of(0.25);
        let src = self.value(x).data();
        let out = Tensor::from_fn(&[c, oh, ow], |i| {
            let ch = i / (oh * ow);
            let y = (i / ow) % oh;
            let xx = i % ow;
            let base = ch * h * w + 2 * y * w + 2 * xx;
            (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter
        });
        self.op(out, &[x], move |ctx| {
            let mut g = Tensor::zeros(&[c, h, w]);
            let gd = g.data_mut();
            for (i, &v) in ctx.grad.data().iter().enumerate() {
                let ch = i / (oh * ow);
                let y = (i / ow) % oh;
                let xx = i % ow;
                let base = ch * h * w + 2 * y * w + 2 * xx;
                let q = v * quarter;
                gd[base] += q;
                gd[base + 1] += q;
                gd[base + w] += q;
                gd[base + w + 1] += q;
            }
            vec![Some(g)]
        })
    }
}
