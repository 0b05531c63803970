//! Spatial, frequency and total training losses plus the PSNR and MS-SSIM
//! quality metrics. Every loss exists as a graph op (for training) and as a
//! plain function on tensors.

use fanerv_autograd::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::spectral_l1;
use crate::Scalar;

/// Standard five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the L1 term against `1 - MS-SSIM`.
    pub alpha: f64,
    /// Weight of the frequency loss.
    pub mu: f64,
    pub ms_ssim_scales: usize,
    pub ms_ssim_window: usize,
    pub ms_ssim_sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            mu: 70.0,
            ms_ssim_scales: 5,
            ms_ssim_window: 11,
            ms_ssim_sigma: 1.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Config {
            key: key.into(),
            reason: reason.into(),
        };
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(bad("alpha", "must lie in [0, 1]"));
        }
        if !(self.mu >= 0.0) {
            return Err(bad("mu", "must be >= 0"));
        }
        if self.ms_ssim_scales == 0 || self.ms_ssim_scales > MS_SSIM_WEIGHTS.len() {
            return Err(bad("ms_ssim_scales", "must be in 1..=5"));
        }
        if self.ms_ssim_window == 0 || self.ms_ssim_window % 2 == 0 {
            return Err(bad("ms_ssim_window", "must be odd"));
        }
        if !(self.ms_ssim_sigma > 0.0) {
            return Err(bad("ms_ssim_sigma", "must be positive"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let k = self.ms_ssim_window;
        let c = (k / 2) as f64;
        let raw: Vec<f64> = (0..k)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.ms_ssim_sigma * self.ms_ssim_sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    /// Scales that fit an `h x w` image and their renormalized weights.
    pub fn ms_ssim_levels(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        let (mut h, mut w) = (h, w);
        let mut n = 0;
        while n < self.ms_ssim_scales && h.min(w) >= self.ms_ssim_window {
            n += 1;
            h /= 2;
            w /= 2;
        }
        if n == 0 {
            return Err(Error::shape(format!(
                "image smaller than the {}-pixel MS-SSIM window",
                self.ms_ssim_window
            )));
        }
        let weights = &MS_SSIM_WEIGHTS[..n];
        let s: f64 = weights.iter().sum();
        Ok(weights.iter().map(|v| v / s).collect())
    }
}

fn check_pair<T: Scalar>(g: &Graph<T>, pred: Var, target: Var) -> Result<(usize, usize, usize)> {
    let (a, b) = (g.value(pred).shape(), g.value(target).shape());
    if a != b || a.len() != 3 {
        return Err(Error::shape(format!("pred {a:?} vs target {b:?}")));
    }
    Ok(g.value(pred).chw())
}

/// Mean over channels of the per-channel MS-SSIM.
pub fn ms_ssim_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let (_, h, w) = check_pair(g, pred, target)?;
    let weights = cfg.ms_ssim_levels(h, w)?;
    let taps: Vec<T> = cfg.gaussian_taps().into_iter().map(T::of).collect();
    let (c1, c2) = (T::of(K1 * K1), T::of(K2 * K2));
    let (mut x, mut y) = (pred, target);
    let mut product: Option<Var> = None;
    for (level, &weight) in weights.iter().enumerate() {
        let last = level + 1 == weights.len();
        let mx = g.separable_filter_valid(x, &taps);
        let my = g.separable_filter_valid(y, &taps);
        let xx = g.mul(x, x);
        let yy = g.mul(y, y);
        let xy = g.mul(x, y);
        let fxx = g.separable_filter_valid(xx, &taps);
        let fyy = g.separable_filter_valid(yy, &taps);
        let fxy = g.separable_filter_valid(xy, &taps);
        let mx2 = g.mul(mx, mx);
        let my2 = g.mul(my, my);
        let mxy = g.mul(mx, my);
        let sxx = g.sub(fxx, mx2);
        let syy = g.sub(fyy, my2);
        let sxy = g.sub(fxy, mxy);

        let num = g.scale(sxy, T::of(2.0));
        let num = g.add_scalar(num, c2);
        let den = g.add(sxx, syy);
        let den = g.add_scalar(den, c2);
        let mut map = g.div(num, den);
        if last {
            let lnum = g.scale(mxy, T::of(2.0));
            let lnum = g.add_scalar(lnum, c1);
            let lden = g.add(mx2, my2);
            let lden = g.add_scalar(lden, c1);
            let lum = g.div(lnum, lden);
            map = g.mul(lum, map);
        }
        let term = g.mean_channels(map);
        let term = g.clamp_min(term, T::zero());
        let term = g.powf(term, T::of(weight));
        product = Some(match product {
            Some(p) => g.mul(p, term),
            None => term,
        });
        if !last {
            x = g.avg_pool2(x);
            y = g.avg_pool2(y);
        }
    }
    Ok(g.mean(product.expect("at least one scale")))
}

/// `alpha * mean|pred - target| + (1 - alpha) * (1 - MS-SSIM)`.
pub fn loss_spa_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_pair(g, pred, target)?;
    let l1 = g.mean_abs_diff(pred, target);
    let l1 = g.scale(l1, T::of(cfg.alpha));
    if cfg.alpha == 1.0 {
        return Ok(l1);
    }
    let ssim = ms_ssim_graph(g, pred, target, cfg)?;
    let ssim = g.scale(ssim, T::of(cfg.alpha - 1.0));
    let ssim = g.add_scalar(ssim, T::of(1.0 - cfg.alpha));
    Ok(g.add(l1, ssim))
}

/// `mean(|Re D| + |Im D|)` with `D` the 2-D spectrum of `pred - target`.
pub fn loss_fft_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    spectral_l1(g, pred, target)
}

/// `loss_spa + mu * loss_fft`.
pub fn loss_total_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let spa = loss_spa_graph(g, pred, target, cfg)?;
    if cfg.mu == 0.0 {
        return Ok(spa);
    }
    let fft = loss_fft_graph(g, pred, target)?;
    let fft = g.scale(fft, T::of(cfg.mu));
    Ok(g.add(spa, fft))
}

fn eval_pair<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    f: impl FnOnce(&mut Graph<T>, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let out = f(&mut g, p, t)?;
    Ok(g.value(out).item().to_f64().expect("finite"))
}

pub fn loss_spa<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    eval_pair(pred, target, |g, p, t| loss_spa_graph(g, p, t, cfg))
}

pub fn loss_fft<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    eval_pair(pred, target, |g, p, t| loss_fft_graph(g, p, t))
}

pub fn loss_total<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    eval_pair(pred, target, |g, p, t| loss_total_graph(g, p, t, cfg))
}

pub fn ms_ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    eval_pair(pred, target, |g, p, t| ms_ssim_graph(g, p, t, cfg))
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// `10 log10(1 / MSE)` for frames in `[0, 1]`; identical frames give `+inf`.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// CSV form of a metric: `inf` for the identical-frame sentinel, `nan` for
/// values a row does not carry.
pub fn format_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}
