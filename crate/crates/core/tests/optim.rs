use fanerv_core::autograd::Tensor;
use fanerv_core::optim::{cosine_lr, Optimizer, OptimizerConfig, StepOutcome};
use proptest::prelude::*;

#[test]
fn cosine_schedule_endpoints() {
    let (lr0, total) = (3e-3, 1000);
    assert!(cosine_lr(total, total, lr0, 0.02).abs() <= 1e-12);
    // warmup covers steps 0..20; step 19 ends it
    assert_eq!(cosine_lr(19, total, lr0, 0.02), lr0);
    assert_eq!(cosine_lr(20, total, lr0, 0.02), lr0);
    assert!((cosine_lr(0, total, lr0, 0.02) - lr0 / 20.0).abs() < 1e-15);
    // decay midpoint: 20 + 980/2
    assert!((cosine_lr(510, total, lr0, 0.02) - lr0 / 2.0).abs() < 1e-9);
    assert!((cosine_lr(50, 100, 5e-4, 0.0) - 2.5e-4).abs() < 1e-12);
    assert_eq!(cosine_lr(0, 100, 5e-4, 0.0), 5e-4);
}

proptest! {
    #[test]
    fn schedule_is_non_increasing_after_warmup(total in 10usize..3000, warm in 0.0f64..0.5) {
        let w = (warm * total as f64).floor() as usize;
        let mut prev = f64::INFINITY;
        for s in w..=total {
            let lr = cosine_lr(s, total, 1.0, warm);
            prop_assert!(lr <= prev + 1e-15);
            prop_assert!(lr >= 0.0);
            prev = lr;
        }
        for s in 0..w {
            prop_assert!(cosine_lr(s, total, 1.0, warm) <= 1.0);
        }
    }
}

fn adan_no_decay() -> OptimizerConfig {
    OptimizerConfig::adan().with_weight_decay(0.0)
}

#[test]
fn zero_gradient_from_zero_state_is_a_no_op() {
    for cfg in [adan_no_decay(), OptimizerConfig::adamw().with_weight_decay(0.0)] {
        let mut p = vec![Tensor::from_vec(&[3], vec![0.5f64, -2.0, 7.0])];
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut opt = Optimizer::new(cfg, &p);
        for _ in 0..5 {
            assert_eq!(opt.step(&mut p, &[Some(&g)], 1e-2), StepOutcome::Applied);
        }
        assert_eq!(p, before);
    }
}

#[test]
fn one_step_on_square_decreases_magnitude() {
    for cfg in [OptimizerConfig::adan(), OptimizerConfig::adamw()] {
        let mut p = vec![Tensor::from_vec(&[1], vec![1.0f64])];
        let mut opt = Optimizer::new(cfg, &p);
        let g = Tensor::from_vec(&[1], vec![2.0 * p[0].data()[0]]);
        opt.step(&mut p, &[Some(&g)], 1e-2);
        assert!(p[0].data()[0].abs() < 1.0, "{}", cfg.name());
    }
}

/// Scalar Adan written directly from the update equations, independent of
/// the library's buffer layout.
struct ScalarAdan {
    m: f64,
    v: f64,
    n: f64,
    prev: Option<f64>,
    k: i32,
}

impl ScalarAdan {
    fn step(&mut self, x: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let (b1, b2, b3, eps) = (0.98, 0.92, 0.99, 1e-8);
        self.k += 1;
        let d = self.prev.map_or(0.0, |p| g - p);
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * d;
        self.n = b3 * self.n + (1.0 - b3) * (g + b2 * d).powi(2);
        let mhat = self.m / (1.0 - b1.powi(self.k));
        let vhat = self.v / (1.0 - b2.powi(self.k));
        let nhat = self.n / (1.0 - b3.powi(self.k));
        let eta = lr / (nhat.sqrt() + eps);
        self.prev = Some(g);
        (x - eta * (mhat + b2 * vhat)) / (1.0 + lr * wd)
    }
}

fn quadratic_curvatures() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.25 * i as f64).collect()
}

#[test]
fn adan_matches_scalar_reference_on_quadratic() {
    let a = quadratic_curvatures();
    let x0: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
    let mut p = vec![Tensor::from_vec(&[10], x0.clone())];
    let mut opt = Optimizer::new(OptimizerConfig::adan(), &p);
    let mut refs: Vec<(f64, ScalarAdan)> = x0
        .iter()
        .map(|&x| {
            (
                x,
                ScalarAdan {
                    m: 0.0,
                    v: 0.0,
                    n: 0.0,
                    prev: None,
                    k: 0,
                },
            )
        })
        .collect();
    for step in 0..100 {
        let lr = cosine_lr(step, 100, 0.05, 0.02);
        let g = Tensor::from_fn(&[10], |i| a[i] * p[0].data()[i]);
        opt.step(&mut p, &[Some(&g)], lr);
        for (i, (x, r)) in refs.iter_mut().enumerate() {
            *x = r.step(*x, a[i] * *x, lr, 0.02);
        }
        for (i, (x, _)) in refs.iter().enumerate() {
            assert!((p[0].data()[i] - x).abs() <= 1e-12 * (1.0 + x.abs()), "step {step} coord {i}");
        }
    }
}

#[test]
fn adan_converges_on_ten_dimensional_quadratic() {
    let a = quadratic_curvatures();
    let x0: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 } / 10f64.sqrt()).collect();
    let norm0: f64 = x0.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm0 - 1.0).abs() < 1e-12);
    let mut p = vec![Tensor::from_vec(&[10], x0)];
    let mut opt = Optimizer::new(adan_no_decay(), &p);
    for step in 0..200 {
        let g = Tensor::from_fn(&[10], |i| a[i] * p[0].data()[i]);
        opt.step(&mut p, &[Some(&g)], cosine_lr(step, 200, 0.1, 0.02));
    }
    let norm: f64 = p[0].data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm <= 1e-3, "final norm {norm}");
}

#[test]
fn non_finite_gradient_skips_the_step() {
    let mut p = vec![Tensor::from_vec(&[2], vec![1.0f32, 2.0]), Tensor::from_vec(&[1], vec![3.0f32])];
    let mut opt = Optimizer::new(OptimizerConfig::adan(), &p);
    let before = (p.clone(), opt.clone());
    let bad = Tensor::from_vec(&[2], vec![f32::NAN, 0.0]);
    let ok = Tensor::from_vec(&[1], vec![1.0f32]);
    assert_eq!(opt.step(&mut p, &[Some(&bad), Some(&ok)], 1e-2), StepOutcome::SkippedNonFinite);
    assert_eq!(p, before.0);
    assert_eq!(opt.slots, before.1.slots);
    assert_eq!((opt.steps, opt.skipped), (0, 1));
}

#[test]
fn tensors_without_gradient_are_untouched() {
    let mut p = vec![Tensor::from_vec(&[1], vec![1.0f64]), Tensor::from_vec(&[1], vec![1.0f64])];
    let mut opt = Optimizer::new(OptimizerConfig::adan(), &p);
    let g = Tensor::from_vec(&[1], vec![1.0]);
    opt.step(&mut p, &[None, Some(&g)], 1e-2);
    assert_eq!(p[0].data()[0], 1.0);
    assert!(p[1].data()[0] < 1.0);
}
