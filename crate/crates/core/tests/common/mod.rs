#![allow(dead_code)]

use fanerv_core::autograd::check::{central_difference, Probe, Report};
use fanerv_core::autograd::{Graph, Tensor, Var};
use fanerv_core::model::{Bound, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL: f64 = 1e-3;
pub const ABS: f64 = 1e-8;

pub fn random(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Compares analytic parameter gradients of a scalar built by `f` against
/// central differences at the sampled `(tensor, element)` positions.
pub fn check_params(
    params: &ParamStore<f64>,
    samples: &[(usize, usize)],
    label: impl Fn(usize) -> String,
    f: impl Fn(&mut Graph<f64>, &Bound) -> Var,
) -> Report {
    let scalar = |store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let root = f(&mut g, &p);
        (g, p, root)
    };
    let (g, p, root) = scalar(params);
    let grads = g.backward(root);
    let mut report = Report::default();
    let mut work = params.clone();
    for &(t, i) in samples {
        let analytic = grads.get(p.var(fanerv_core::model::ParamId(t))).map_or(0.0, |g| g.data()[i]);
        let mut flat = work.tensors[t].data().to_vec();
        let numeric = central_difference(&mut flat, i, STEP, |x| {
            work.tensors[t].data_mut().copy_from_slice(x);
            let (g, _, root) = scalar(&work);
            g.value(root).item()
        });
        work.tensors[t].data_mut().copy_from_slice(&flat);
        report.probes.push(Probe {
            label: label(t),
            index: i,
            analytic,
            numeric,
        });
    }
    report
}

/// Up to `per_tensor` evenly spread element indices of every tensor.
pub fn spread_samples(params: &ParamStore<f64>, per_tensor: usize) -> Vec<(usize, usize)> {
    params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(t, tensor)| {
            let n = tensor.numel();
            let k = per_tensor.min(n);
            (0..k).map(move |j| (t, j * n / k))
        })
        .collect()
}

/// Weighted sum with uneven weights so that symmetric errors cannot cancel.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var) -> Var {
    let w = Tensor::from_fn(g.value(out).shape(), |i| 0.3 + (i % 7) as f64 * 0.17);
    let w = g.constant(w);
    let prod = g.mul(out, w);
    g.sum(prod)
}
