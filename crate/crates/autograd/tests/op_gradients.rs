//! Every differentiable op against central finite differences (f64).

use fanerv_autograd::check::{central_difference, Report, Probe};
use fanerv_autograd::{ConvGeometry, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-8;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Builds a scalar from `inputs` with `f`, then checks every input element.
fn check_op(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |vals: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        // weight outputs unevenly so that symmetric errors cannot cancel
        let w = Tensor::from_fn(g.value(out).shape(), |i| 0.3 + (i % 7) as f64 * 0.17);
        let wv = g.constant(w);
        let prod = g.mul(out, wv);
        let root = g.sum(prod);
        (g, vars, root)
    };
    let (g, vars, root) = eval(&inputs);
    let grads = g.backward(root);
    let mut report = Report::default();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient for every input").clone();
        let mut flat = inputs[k].data().to_vec();
        for i in 0..flat.len() {
            let numeric = central_difference(&mut flat, i, STEP, |x| {
                let mut vals = inputs.clone();
                vals[k] = Tensor::from_vec(inputs[k].shape(), x.to_vec());
                let (g, _, root) = eval(&vals);
                g.value(root).item()
            });
            report.probes.push(Probe {
                label: format!("{name}/input{k}"),
                index: i,
                analytic: analytic.data()[i],
                numeric,
            });
        }
    }
    let failures = report.failures(REL, ABS);
    assert!(failures.is_empty(), "{name}: {failures:#?}");
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[2, 3, 4]);
    let b = random(&mut rng, &[2, 3, 4]);
    let pos = a.map(|v| v.abs() + 0.5);
    check_op("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check_op("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check_op("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check_op("div", vec![a.clone(), pos.clone()], |g, v| g.div(v[0], v[1]));
    check_op("scale", vec![a.clone()], |g, v| g.scale(v[0], -1.7));
    check_op("add_scalar", vec![a.clone()], |g, v| g.add_scalar(v[0], 0.3));
    check_op("gelu", vec![a.clone()], |g, v| g.gelu(v[0]));
    check_op("powf", vec![pos.clone()], |g, v| g.powf(v[0], 0.2856));
    check_op("clamp_min", vec![a.map(|v| if v.abs() < 0.05 { 0.3 } else { v })], |g, v| {
        g.clamp_min(v[0], 0.0)
    });
}

#[test]
fn reductions_and_modulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, &[3, 4, 5]);
    let b = random(&mut rng, &[3, 4, 5]);
    check_op("mean", vec![a.clone()], |g, v| g.mean(v[0]));
    check_op("mean_channels", vec![a.clone()], |g, v| g.mean_channels(v[0]));
    check_op("mean_abs_diff", vec![a.clone(), b.clone()], |g, v| g.mean_abs_diff(v[0], v[1]));
    let gamma = random(&mut rng, &[3]);
    let beta = random(&mut rng, &[3]);
    check_op("scale_channels", vec![a.clone(), gamma.clone()], |g, v| g.scale_channels(v[0], v[1]));
    check_op("modulate", vec![a, gamma, beta], |g, v| g.modulate(v[0], v[1], v[2]));
}

#[test]
fn dense_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for geo in [
        ConvGeometry::same(3, 1),
        ConvGeometry::same(1, 1),
        ConvGeometry::same(3, 2),
        ConvGeometry::patchify(2),
        ConvGeometry { kernel: 3, stride: 2, padding: 1, dilation: 1 },
    ] {
        let x = random(&mut rng, &[2, 6, 6]);
        let w = random(&mut rng, &[3, 2, geo.kernel, geo.kernel]);
        let b = random(&mut rng, &[3]);
        check_op(&format!("conv {geo:?}"), vec![x, w, b], move |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), geo)
        });
    }
}

#[test]
fn depthwise_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (k, d) in [(3, 1), (5, 1), (7, 2)] {
        let x = random(&mut rng, &[2, 5, 7]);
        let w = random(&mut rng, &[2, 1, k, k]);
        let b = random(&mut rng, &[2]);
        check_op(&format!("dw k{k} d{d}"), vec![x, w, b], move |g, v| {
            g.depthwise_conv2d(v[0], v[1], Some(v[2]), d)
        });
    }
}

#[test]
fn layout_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[8, 2, 3]);
    let y = random(&mut rng, &[3, 2, 3]);
    check_op("pixel_shuffle", vec![x.clone()], |g, v| g.pixel_shuffle(v[0], 2));
    check_op("concat", vec![x.clone(), y], |g, v| g.concat_channels(&[v[0], v[1]]));
    check_op("slice", vec![x.clone()], |g, v| g.slice_channels(v[0], 2, 3));
    check_op("avg_pool2", vec![random(&mut rng, &[2, 5, 6])], |g, v| g.avg_pool2(v[0]));
    check_op("filter", vec![random(&mut rng, &[2, 7, 8])], |g, v| {
        g.separable_filter_valid(v[0], &[0.2, 0.5, 0.3])
    });
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[5]);
    let w = random(&mut rng, &[4, 5]);
    let b = random(&mut rng, &[4]);
    check_op("linear", vec![x, w, b], |g, v| g.linear(v[0], v[1], Some(v[2])));
}
