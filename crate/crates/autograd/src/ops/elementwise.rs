use crate::{Graph, Real, Tensor, Var};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = T::of(INV_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

fn same_shape<T: Real>(g: &Graph<T>, a: Var, b: Var, op: &str) {
    assert_eq!(
        g.value(a).shape(),
        g.value(b).shape(),
        "{op}: operand shapes differ"
    );
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.op(out, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.op(out, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|v| -v))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.op(out, &[a, b], |ctx| {
            let ga = ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y));
            let gb = ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x));
            vec![ga, gb]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "div");
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.op(out, &[a, b], |ctx| {
            let ga = ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g / y));
            let gb = ctx.needs[1].then(|| {
                let gy = ctx.grad.zip_map(ctx.output, |g, q| g * q);
                gy.zip_map(ctx.inputs[1], |v, y| -v / y)
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.op(out, &[a], move |ctx| vec![Some(ctx.grad.map(|g| g * s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.op(out, &[a], |ctx| vec![Some(ctx.grad.clone())])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.op(out, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| g * gelu_grad(x)))]
        })
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        let out = self.value(a).map(|x| if x > floor { x } else { floor });
        self.op(out, &[a], move |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                if x > floor {
                    g
                } else {
                    T::zero()
                }
            }))]
        })
    }

    /// `a^p` for non-negative `a`.
    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let out = self.value(a).map(|x| x.powf(p));
        self.op(out, &[a], move |ctx| {
            let mut g = ctx.grad.clone();
            for ((gv, &x), &y) in g
                .data_mut()
                .iter_mut()
                .zip(ctx.inputs[0].data())
                .zip(ctx.output.data())
            {
                *gv = if x > T::zero() {
                    *gv * p * y / x
                } else {
                    T::zero()
                };
            }
            vec![Some(g)]
        })
    }

    /// Multiplies each channel of a `[c, h, w]` map by the matching entry of a
    /// `[c]` vector.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(scale).numel(), c, "scale_channels: scale length");
        let hw = h * w;
        let mut out = self.value(x).clone();
        let sc = self.value(scale).data().to_vec();
        for (plane, &s) in out.data_mut().chunks_mut(hw).zip(&sc) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        self.op(out, &[x, scale], move |ctx| {
            let sc = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let mut gx = ctx.grad.clone();
                for (plane, &s) in gx.data_mut().chunks_mut(hw).zip(sc) {
                    plane.iter_mut().for_each(|v| *v *= s);
                }
                gx
            });
            let gs = ctx.needs[1].then(|| {
                let (g, xs) = (ctx.grad.data(), ctx.inputs[0].data());
                Tensor::from_fn(&[c], |ch| {
                    let r = ch * hw..(ch + 1) * hw;
                    g[r.clone()].iter().zip(&xs[r]).map(|(&a, &b)| a * b).sum()
                })
                .reshape(ctx.inputs[1].shape())
            });
            vec![gx, gs]
        })
    }

    /// Per-channel affine modulation `x * (1 + gamma) + beta` of a `[c, h, w]`
    /// map by two `[c]` vectors.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(gamma).numel(), c, "modulate: gamma length");
        assert_eq!(self.value(beta).numel(), c, "modulate: beta length");
        let hw = h * w;
        let mut out = self.value(x).clone();
        {
            let gm = self.value(gamma).data().to_vec();
            let bt = self.value(beta).data().to_vec();
            for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
                let s = T::one() + gm[ch];
                for v in plane {
                    *v = *v * s + bt[ch];
                }
            }
        }
        self.op(out, &[x, gamma, beta], move |ctx| {
            let grad = ctx.grad.data();
            let xs = ctx.inputs[0].data();
            let gm = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let mut gx = ctx.grad.clone();
                for (ch, plane) in gx.data_mut().chunks_mut(hw).enumerate() {
                    let s = T::one() + gm[ch];
                    plane.iter_mut().for_each(|v| *v *= s);
                }
                gx
            });
            let ggamma = ctx.needs[1].then(|| {
                Tensor::from_fn(&[c], |ch| {
                    let r = ch * hw..(ch + 1) * hw;
                    grad[r.clone()]
                        .iter()
                        .zip(&xs[r])
                        .map(|(&g, &x)| g * x)
                        .sum()
                })
                .reshape(ctx.inputs[1].shape())
            });
            let gbeta = ctx.needs[2].then(|| {
                Tensor::from_fn(&[c], |ch| grad[ch * hw..(ch + 1) * hw].iter().copied().sum())
                    .reshape(ctx.inputs[2].shape())
            });
            vec![gx, ggamma, gbeta]
        })
    }
}
