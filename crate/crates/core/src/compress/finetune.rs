//! Quantization-aware fine-tuning with a rate penalty.

use fanerv_autograd::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::quant::{fake_quantize, QuantSpec};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::losses::{loss_total_graph, psnr, LossConfig};
use crate::model::{normalized_time, Bound, Fanerv, ParamStore};
use crate::optim::{cosine_lr, Optimizer, OptimizerConfig};
use crate::trainer::{MetricRow, Task};
use crate::{Frame, Scalar};

/// Width that disables quantization during fine-tuning.
pub const FLOAT_BITS: u32 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub warmup: f64,
    pub optimizer: OptimizerConfig,
    /// 2..=16, or [`FLOAT_BITS`] for plain fine-tuning.
    pub bits: u32,
    /// Weight of the estimated bits per pixel.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr0: 5e-4,
            warmup: 0.0,
            optimizer: OptimizerConfig::adan(),
            bits: 8,
            lambda: 0.0,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Error::Config {
            key: key.into(),
            reason,
        };
        if self.bits != FLOAT_BITS {
            QuantSpec::new(self.bits)?;
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(bad("lr0", "must be > 0".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(bad("lambda", format!("{} is not a finite non-negative number", self.lambda)));
        }
        if self.lambda > 0.0 && self.bits == FLOAT_BITS {
            return Err(bad("lambda", "a rate penalty needs quantized weights".into()));
        }
        Ok(())
    }

    fn spec(&self) -> Option<QuantSpec> {
        (self.bits != FLOAT_BITS).then_some(QuantSpec { bits: self.bits })
    }
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("finite conversion")
}

/// Forward value `dequantize(quantize(w))`, identity gradient.
pub fn straight_through(g: &mut Graph<f32>, w: Var, spec: QuantSpec) -> Result<Var> {
    let q = fake_quantize(g.value(w), spec)?;
    Ok(g.op(q, &[w], |ctx| vec![Some(ctx.grad.clone())]))
}

/// Step size of `t` under `spec`.
pub fn quant_step<T: Scalar>(t: &Tensor<T>, spec: QuantSpec) -> f64 {
    let m = to_f64(t.max_abs());
    if m == 0.0 {
        1.0
    } else {
        m / spec.qmax() as f64
    }
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

fn laplace_pdf(x: f64, b: f64) -> f64 {
    (-x.abs() / b).exp() / (2.0 * b)
}

const MIN_PROB: f64 = 1e-12;

/// Estimated code length in bits of `round(w / step)` under a zero-mean
/// Laplace model whose scale is the mean magnitude of `w / step` (held
/// fixed for the gradient). Each element costs `-log2 P(|y - k| <= 1/2)`
/// evaluated at the continuous `y`.
pub fn laplace_bits<T: Scalar>(g: &mut Graph<T>, w: Var, step: f64) -> Var {
    let y: Vec<f64> = g.value(w).data().iter().map(|&v| to_f64(v) / step).collect();
    let b = (y.iter().map(|v| v.abs()).sum::<f64>() / y.len().max(1) as f64).max(1e-3);
    let mut total = 0.0;
    let mut dy = Vec::with_capacity(y.len());
    for &v in &y {
        let p = laplace_cdf(v + 0.5, b) - laplace_cdf(v - 0.5, b);
        if p > MIN_PROB {
            total -= p.log2();
            dy.push(-(laplace_pdf(v + 0.5, b) - laplace_pdf(v - 0.5, b)) / (p * std::f64::consts::LN_2) / step);
        } else {
            total -= MIN_PROB.log2();
            dy.push(0.0);
        }
    }
    let shape = g.value(w).shape().to_vec();
    g.op(Tensor::scalar(T::of(total)), &[w], move |ctx| {
        let s = to_f64(ctx.grad.item());
        vec![Some(Tensor::from_fn(&shape, |i| T::of(s * dy[i])))]
    })
}

/// Content embeddings of every frame from the trained encoder.
pub fn initial_embeddings(model: &Fanerv, params: &ParamStore<f32>, clip: &VideoClip, task: &Task) -> Result<Vec<Frame>> {
    (0..clip.len())
        .map(|t| model.embed(params, &task.eval_input(clip, t)?))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FinetuneState {
    /// Full parameter set; only the decoder side changes.
    pub params: ParamStore<f32>,
    pub embeddings: Vec<Frame>,
    /// One `finetune` row per epoch with the task loss, the PSNR of the
    /// (quantized) training predictions and the learning rate.
    pub history: Vec<MetricRow>,
}

/// Fine-tunes decoder parameters and embeddings through straight-through
/// quantization. The objective per frame is the task loss plus `lambda`
/// times the estimated bits per pixel: the embedding of that frame plus an
/// equal share of the decoder. The encoder is frozen.
pub fn compress_finetune(
    model: &Fanerv,
    params: &ParamStore<f32>,
    embeddings: &[Frame],
    clip: &VideoClip,
    task: &Task,
    cfg: &FinetuneConfig,
    loss_cfg: &LossConfig,
) -> Result<FinetuneState> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if embeddings.len() != clip.len() {
        return Err(Error::shape(format!(
            "{} embeddings for {} frames",
            embeddings.len(),
            clip.len()
        )));
    }
    let spec = cfg.spec();
    let dec = model.decoder_range();
    let split = task.split(clip.len())?;
    let pixels = (clip.height * clip.width) as f64;
    let share = 1.0 / split.train.len() as f64;

    let mut params = params.clone();
    let mut embeddings = embeddings.to_vec();
    let mut tensors: Vec<Tensor<f32>> = params.tensors[dec.clone()].to_vec();
    let n_dec = tensors.len();
    tensors.extend(embeddings.iter().cloned());
    let mut opt = Optimizer::new(cfg.optimizer, &tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = split.train.clone();
    let total_steps = cfg.epochs * order.len();
    let mut step = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut psnr_sum, mut lr) = (0.0, 0.0, 0.0);
        for &t in &order {
            params.tensors[dec.clone()].clone_from_slice(&tensors[..n_dec]);
            let mut g = Graph::new();
            let leaves = params.bind_with(&mut g, |i| dec.contains(&i).then_some(true));
            let emb_leaf = g.leaf(tensors[n_dec + t].clone());
            let mut rate: Option<Var> = None;
            let mut add_rate = |g: &mut Graph<f32>, r: Var, weight: f64| {
                let r = g.scale(r, (cfg.lambda * weight / pixels) as f32);
                rate = Some(match rate {
                    Some(acc) => g.add(acc, r),
                    None => r,
                });
            };
            let (bound, emb) = match spec {
                Some(spec) => {
                    let mut vars = leaves.vars.clone();
                    for i in dec.clone() {
                        let w = leaves.vars[i].expect("decoder leaf");
                        let h = quant_step(g.value(w), spec);
                        if cfg.lambda > 0.0 {
                            let r = laplace_bits(&mut g, w, h);
                            add_rate(&mut g, r, share);
                        }
                        vars[i] = Some(straight_through(&mut g, w, spec)?);
                    }
                    let emb_max = tensors[n_dec..].iter().fold(0.0f32, |m, e| m.max(e.max_abs()));
                    let h = if emb_max == 0.0 {
                        1.0
                    } else {
                        emb_max as f64 / spec.qmax() as f64
                    };
                    if cfg.lambda > 0.0 {
                        let r = laplace_bits(&mut g, emb_leaf, h);
                        add_rate(&mut g, r, 1.0);
                    }
                    let q = Tensor::from_fn(g.value(emb_leaf).shape(), |i| {
                        let v = g.value(emb_leaf).data()[i] as f64;
                        let s = (v / h).round().clamp(-spec.qmax() as f64, spec.qmax() as f64);
                        (s * emb_max as f64 / spec.qmax() as f64) as f32
                    });
                    let emb = g.op(q, &[emb_leaf], |ctx| vec![Some(ctx.grad.clone())]);
                    (Bound { vars }, emb)
                }
                None => (leaves.clone(), emb_leaf),
            };
            let (_, target, visible) = task.training_pair(clip, t)?;
            let mut pred = model.decode(&mut g, &bound, emb, normalized_time(t, clip.len()))?;
            if let Some(vis) = visible {
                let m = g.constant(vis);
                pred = g.mul(pred, m);
            }
            let target_var = g.constant(target.clone());
            let loss = loss_total_graph(&mut g, pred, target_var, loss_cfg)?;
            let loss_value = g.value(loss).item() as f64;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    frame: t,
                    loss: loss_value,
                });
            }
            let objective = match rate {
                Some(r) => g.add(loss, r),
                None => loss,
            };
            psnr_sum += psnr(&g.value(pred).map(|v| v.clamp(0.0, 1.0)), &target)?;
            loss_sum += loss_value;
            let mut grads = g.backward(objective).into_map();
            let mut per: Vec<Option<Tensor<f32>>> = dec
                .clone()
                .map(|i| grads.remove(&leaves.vars[i].expect("decoder leaf").index()))
                .collect();
            per.extend((0..embeddings.len()).map(|k| if k == t { grads.remove(&emb_leaf.index()) } else { None }));
            lr = cosine_lr(step, total_steps, cfg.lr0, cfg.warmup);
            let refs: Vec<Option<&Tensor<f32>>> = per.iter().map(Option::as_ref).collect();
            opt.step(&mut tensors, &refs, lr);
            step += 1;
        }
        let n = order.len() as f64;
        history.push(MetricRow {
            epoch,
            split: "finetune".into(),
            frame: None,
            psnr: psnr_sum / n,
            ms_ssim: f64::NAN,
            loss: loss_sum / n,
            lr,
        });
        log::debug!("finetune epoch {epoch}: loss {:.5} psnr {:.2}", loss_sum / n, psnr_sum / n);
    }
    params.tensors[dec].clone_from_slice(&tensors[..n_dec]);
    embeddings.clone_from_slice(&tensors[n_dec..]);
    Ok(FinetuneState {
        params,
        embeddings,
        history,
    })
}
