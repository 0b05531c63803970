//! Parameter declaration, initialization and graph binding, plus the three
//! primitive layers every block is assembled from.

use std::ops::Range;

use fanerv_autograd::{ConvGeometry, Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`: Kaiming-uniform with `a = sqrt(5)`,
    /// the stock initialization for convolution and linear weights and biases.
    KaimingUniform { fan_in: usize },
    Zeros,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations under hierarchical dotted names.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    specs: Vec<ParamSpec>,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.prefix.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    /// Runs `f` inside a nested name scope.
    pub fn scoped<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.push_scope(name);
        let r = f(self);
        self.pop_scope();
        r
    }

    pub fn declare(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        debug_assert!(
            self.specs.iter().all(|s| s.name != full),
            "duplicate parameter {full}"
        );
        self.specs.push(ParamSpec {
            name: full,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn finish(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Parameter values in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn init(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Self {
        let tensors = specs
            .iter()
            .map(|spec| match spec.init {
                Init::KaimingUniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor::from_fn(&spec.shape, |_| T::of(rng.gen_range(-bound..bound)))
                }
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Constant(v) => Tensor::full(&spec.shape, T::of(v)),
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            tensors: specs.iter().map(|s| Tensor::zeros(&s.shape)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        self.bind_with(g, |_| Some(trainable))
    }

    /// Records only the parameters in `range`.
    pub fn bind_range(&self, g: &mut Graph<T>, range: Range<usize>, trainable: bool) -> Bound {
        self.bind_with(g, |i| range.contains(&i).then_some(trainable))
    }

    /// `mode(i)`: `Some(true)` leaf, `Some(false)` constant, `None` unbound.
    pub fn bind_with(&self, g: &mut Graph<T>, mode: impl Fn(usize) -> Option<bool>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    mode(i).map(|trainable| {
                        if trainable {
                            g.leaf(t.clone())
                        } else {
                            g.constant(t.clone())
                        }
                    })
                })
                .collect(),
        }
    }
}

/// Graph handles of the parameters for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].unwrap_or_else(|| panic!("parameter {} is not bound", id.0))
    }
}

/// Dense convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
    ) -> Self {
        let k = geometry.kernel;
        let fan_in = in_channels * k * k;
        b.push_scope(name);
        let weight = b.declare(
            "weight",
            &[out_channels, in_channels, k, k],
            Init::KaimingUniform { fan_in },
        );
        let bias = b.declare("bias", &[out_channels], Init::KaimingUniform { fan_in });
        b.pop_scope();
        Self {
            weight,
            bias,
            geometry,
            in_channels,
            out_channels,
        }
    }

    pub fn pointwise(b: &mut ParamBuilder, name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self::new(b, name, in_channels, out_channels, ConvGeometry::same(1, 1))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.geometry)
    }

    pub fn zero<T: Scalar>(&self, params: &mut ParamStore<T>) {
        for id in [self.weight, self.bias] {
            params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Depthwise convolution with bias and `same` padding.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
}

impl DwConv {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, kernel: usize, dilation: usize) -> Self {
        let fan_in = kernel * kernel;
        b.push_scope(name);
        let weight = b.declare(
            "weight",
            &[channels, 1, kernel, kernel],
            Init::KaimingUniform { fan_in },
        );
        let bias = b.declare("bias", &[channels], Init::KaimingUniform { fan_in });
        b.pop_scope();
        Self {
            weight,
            bias,
            kernel,
            dilation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.depthwise_conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.dilation)
    }

    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }
}

/// Fully connected layer on a vector.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub out_features: usize,
}

impl Dense {
    pub fn new(b: &mut ParamBuilder, name: &str, in_features: usize, out_features: usize, init: Option<Init>) -> Self {
        let default = Init::KaimingUniform { fan_in: in_features };
        b.push_scope(name);
        let weight = b.declare("weight", &[out_features, in_features], init.unwrap_or(default));
        let bias = b.declare("bias", &[out_features], init.unwrap_or(default));
        b.pop_scope();
        Self {
            weight,
            bias,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}
