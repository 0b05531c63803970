use crate::{Graph, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.op(out, &[a], |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).numel() as f64);
        let out = Tensor::scalar(self.value(a).sum() / n);
        self.op(out, &[a], move |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item() / n))]
        })
    }

    /// `mean(|a - b|)`. The subgradient at zero is zero.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mean_abs_diff: operand shapes differ"
        );
        let n = T::of(self.value(a).numel() as f64);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        self.op(Tensor::scalar(total / n), &[a, b], move |ctx| {
            let scale = ctx.grad.item() / n;
            let ga = ctx.inputs[0].zip_map(ctx.inputs[1], |x, y| sign(x - y) * scale);
            let gb = ctx.needs[1].then(|| ga.map(|v| -v));
            vec![ctx.needs[0].then_some(ga), gb]
        })
    }

    /// Spatial mean of each channel: `[c, h, w] -> [c]`.
    pub fn mean_channels(&mut self, a: Var) -> Var {
        let (c, h, w) = self.value(a).chw();
        let hw = h * w;
        let n = T::of(hw as f64);
        let src = self.value(a).data();
        let out = Tensor::from_fn(&[c], |ch| src[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() / n);
        self.op(out, &[a], move |ctx| {
            let mut g = Tensor::zeros(&[c, h, w]);
            for (ch, plane) in g.data_mut().chunks_mut(hw).enumerate() {
                let v = ctx.grad.data()[ch] / n;
                plane.iter_mut().for_each(|p| *p = v);
            }
            vec![Some(g)]
        })
    }
}

#[inline]
pub(crate) fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
