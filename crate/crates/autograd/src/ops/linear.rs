use crate::{Graph, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    /// Dense layer on a vector: `weight [out, in] * x [in] + bias [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let n_in = self.value(x).numel();
        let wshape = self.value(weight).shape().to_vec();
        assert_eq!(wshape.len(), 2, "linear: weight must be [out, in]");
        assert_eq!(wshape[1], n_in, "linear: input length {n_in} vs weight {wshape:?}");
        let n_out = wshape[0];
        let mut out = match bias {
            Some(b) => {
                assert_eq!(self.value(b).numel(), n_out, "linear: bias length");
                self.value(b).clone().reshape(&[n_out])
            }
            None => Tensor::zeros(&[n_out]),
        };
        T::gemm(
            n_out,
            n_in,
            1,
            T::one(),
            self.value(weight).data(),
            (n_in as isize, 1),
            self.value(x).data(),
            (1, 1),
            T::one(),
            out.data_mut(),
            (1, 1),
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.op(out, &parents, move |ctx| {
            let g = ctx.grad.data();
            let xs = ctx.inputs[0].data();
            let w = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let mut gx = Tensor::zeros(ctx.inputs[0].shape());
                T::gemm(1, n_out, n_in, T::one(), g, (n_out as isize, 1), w, (n_in as isize, 1), T::zero(), gx.data_mut(), (n_in as isize, 1));
                gx
            });
            let gw = ctx.needs[1].then(|| {
                Tensor::from_fn(&[n_out, n_in], |i| g[i / n_in] * xs[i % n_in])
            });
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| ctx.grad.clone().reshape(ctx.inputs[2].shape())));
            }
            grads
        })
    }
}
