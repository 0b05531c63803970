//! Optimization loop, evaluation sweeps and the ablation runner.

use std::time::Instant;

use fanerv_autograd::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_mask, make_mask, split_even_odd, MaskSpec, TaskSplit, VideoClip};
use crate::error::{Error, Result};
use crate::losses::{format_metric, loss_total_graph, ms_ssim, psnr, LossConfig};
use crate::model::{normalized_time, size_model, Ablation, Fanerv, ModelConfig, ParamStore};
use crate::optim::{cosine_lr, Optimizer, OptimizerConfig};
use crate::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Evaluate every this many epochs, and always after the last one.
    pub eval_every: usize,
    /// Stop after the first evaluation whose training PSNR reaches this
    /// value. The learning-rate schedule still spans `epochs`.
    #[serde(default)]
    pub target_psnr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr0: 3e-3,
            warmup: 0.02,
            optimizer: OptimizerConfig::adan(),
            seed: 0,
            eval_every: 1,
            target_psnr: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Config {
            key: key.into(),
            reason: reason.into(),
        };
        if !(self.lr0 > 0.0) {
            return Err(bad("lr0", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(bad("warmup", "must lie in [0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(bad("eval_every", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Task {
    /// Fit every frame.
    Regression,
    /// Fit even frames, evaluate on odd ones.
    Interpolation,
    /// Fit masked frames, supervising only visible pixels; evaluate against
    /// the full frames.
    Inpainting { mask: MaskSpec },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Interpolation => "interpolation",
            Task::Inpainting { .. } => "inpainting",
        }
    }

    pub fn split(&self, frames: usize) -> Result<TaskSplit> {
        match self {
            Task::Interpolation => split_even_odd(frames),
            _ => Ok(TaskSplit::all(frames)),
        }
    }

    /// Encoder input and supervision target for frame `t`, plus the
    /// visibility tensor when only part of the frame is supervised.
    pub fn training_pair(&self, clip: &VideoClip, t: usize) -> Result<(Frame, Frame, Option<Frame>)> {
        let frame = &clip.frames[t];
        match self {
            Task::Inpainting { mask } => {
                let m = make_mask(mask, clip.height, clip.width, t)?;
                let masked = apply_mask(frame, &m)?;
                Ok((masked.clone(), masked, Some(m.to_tensor(3))))
            }
            _ => Ok((frame.clone(), frame.clone(), None)),
        }
    }

    /// Encoder input at evaluation time; the reference is always the full
    /// frame.
    pub fn eval_input(&self, clip: &VideoClip, t: usize) -> Result<Frame> {
        Ok(self.training_pair(clip, t)?.0)
    }
}

/// One CSV row: `epoch,split,frame,psnr,ms_ssim,loss,lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    /// Frame index, or `None` for an aggregate row.
    pub frame: Option<usize>,
    #[serde(with = "crate::report::nonfinite")]
    pub psnr: f64,
    #[serde(with = "crate::report::nonfinite")]
    pub ms_ssim: f64,
    #[serde(with = "crate::report::nonfinite")]
    pub loss: f64,
    #[serde(with = "crate::report::nonfinite")]
    pub lr: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "epoch,split,frame,psnr,ms_ssim,loss,lr";

    pub fn csv(&self) -> String {
        let frame = self.frame.map_or("mean".to_string(), |f| f.to_string());
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            frame,
            format_metric(self.psnr),
            format_metric(self.ms_ssim),
            format_metric(self.loss),
            format_metric(self.lr)
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(MetricRow::HEADER);
    s.push_str("\r\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push_str("\r\n");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetric {
    pub frame: usize,
    pub psnr: f64,
    pub ms_ssim: f64,
}

/// Mean PSNR and MS-SSIM. Infinite PSNR values (exact reconstructions) are
/// left out of the PSNR mean; if every frame is exact the mean is infinite.
pub fn mean_metrics(rows: &[FrameMetric]) -> (f64, f64) {
    let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
    let psnr = if finite.is_empty() {
        if rows.is_empty() {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        if finite.len() < rows.len() {
            log::info!(
                "{} exact frame(s) with infinite PSNR left out of the mean",
                rows.len() - finite.len()
            );
        }
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let ssim = rows.iter().map(|r| r.ms_ssim).sum::<f64>() / rows.len() as f64;
    (psnr, ssim)
}

/// Decodes each requested frame with clamped output and scores it against
/// the ground truth.
pub fn evaluate(
    model: &Fanerv,
    params: &ParamStore<f32>,
    clip: &VideoClip,
    task: &Task,
    frames: &[usize],
    loss_cfg: &LossConfig,
) -> Result<Vec<FrameMetric>> {
    frames
        .iter()
        .map(|&t| {
            let input = task.eval_input(clip, t)?;
            let out = model.reconstruct(params, &input, normalized_time(t, clip.len()))?;
            Ok(FrameMetric {
                frame: t,
                psnr: psnr(&out, &clip.frames[t])?,
                ms_ssim: ms_ssim(&out, &clip.frames[t], loss_cfg)?,
            })
        })
        .collect()
}

/// Model, parameters and optimizer after training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Fanerv,
    pub params: ParamStore<f32>,
    pub optimizer: Optimizer<f32>,
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<MetricRow>,
}

impl TrainState {
    pub fn new(model: Fanerv, seed: u64, optimizer: OptimizerConfig) -> Self {
        let params = model.init_params(seed);
        let optimizer = Optimizer::new(optimizer, &params.tensors);
        Self {
            model,
            params,
            optimizer,
            epoch: 0,
            seed,
            history: Vec::new(),
        }
    }

    /// Latest aggregate PSNR recorded for `split`.
    pub fn last_psnr(&self, split: &str) -> Option<f64> {
        self.history
            .iter()
            .rev()
            .find(|r| r.split == split && r.frame.is_none())
            .map(|r| r.psnr)
    }
}

/// Loss, PSNR of the unclamped-then-clamped prediction, and gradients of
/// one training frame.
pub struct StepResult {
    pub loss: f64,
    pub psnr: f64,
    pub grads: Vec<Option<fanerv_autograd::Tensor<f32>>>,
}

/// Forward and backward pass for frame `t` of `clip`.
pub fn frame_step(
    model: &Fanerv,
    params: &ParamStore<f32>,
    clip: &VideoClip,
    task: &Task,
    t: usize,
    loss_cfg: &LossConfig,
) -> Result<StepResult> {
    let (input, target, visible) = task.training_pair(clip, t)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let x = g.constant(input);
    let mut pred = model.forward(&mut g, &p, x, normalized_time(t, clip.len()))?;
    if let Some(vis) = visible {
        let m = g.constant(vis);
        pred = g.mul(pred, m);
    }
    let target_var = g.constant(target.clone());
    let loss = loss_total_graph(&mut g, pred, target_var, loss_cfg)?;
    let loss_value = g.value(loss).item() as f64;
    let clamped = g.value(pred).map(|v| v.clamp(0.0, 1.0));
    let psnr = psnr(&clamped, &target)?;
    let grads = if loss_value.is_finite() {
        let mut map = g.backward(loss).into_map();
        p.vars.iter().map(|v| v.and_then(|v| map.remove(&v.index()))).collect()
    } else {
        Vec::new()
    };
    Ok(StepResult {
        loss: loss_value,
        psnr,
        grads,
    })
}

/// Runs `cfg.epochs` epochs on top of `state`.
pub fn train(
    state: &mut TrainState,
    clip: &VideoClip,
    task: &Task,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<()> {
    cfg.validate()?;
    loss_cfg.validate()?;
    clip.check_stride(state.model.config.total_stride())?;
    let split = task.split(clip.len())?;
    let total_steps = cfg.epochs * split.train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = split.train.clone();
    let mut step = 0;
    let start_epoch = state.epoch;
    for epoch in start_epoch + 1..=start_epoch + cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut psnr_sum, mut lr) = (0.0, 0.0, 0.0);
        for &t in &order {
            let res = frame_step(&state.model, &state.params, clip, task, t, loss_cfg)?;
            if !res.loss.is_finite() {
                log::error!(
                    "non-finite loss: epoch {epoch}, frame {t}, step {step}, lr {lr}, optimizer steps {}, skipped {}",
                    state.optimizer.steps,
                    state.optimizer.skipped
                );
                return Err(Error::NonFiniteLoss {
                    epoch,
                    frame: t,
                    loss: res.loss,
                });
            }
            lr = cosine_lr(step, total_steps, cfg.lr0, cfg.warmup);
            let grads: Vec<_> = res.grads.iter().map(Option::as_ref).collect();
            state.optimizer.step(&mut state.params.tensors, &grads, lr);
            loss_sum += res.loss;
            psnr_sum += res.psnr;
            step += 1;
        }
        let n = order.len() as f64;
        state.epoch = epoch;
        state.history.push(MetricRow {
            epoch,
            split: "fit".into(),
            frame: None,
            psnr: psnr_sum / n,
            ms_ssim: f64::NAN,
            loss: loss_sum / n,
            lr,
        });
        log::debug!(
            "epoch {epoch}: loss {:.5} fit psnr {:.2} ({:.2?})",
            loss_sum / n,
            psnr_sum / n,
            t0.elapsed()
        );
        let last = epoch == start_epoch + cfg.epochs;
        if (epoch - start_epoch) % cfg.eval_every == 0 || last {
            for (name, frames) in [("train", &split.train), ("test", &split.test)] {
                if frames.is_empty() {
                    continue;
                }
                let rows = evaluate(&state.model, &state.params, clip, task, frames, loss_cfg)?;
                let (mp, ms) = mean_metrics(&rows);
                for r in &rows {
                    state.history.push(MetricRow {
                        epoch,
                        split: name.into(),
                        frame: Some(r.frame),
                        psnr: r.psnr,
                        ms_ssim: r.ms_ssim,
                        loss: f64::NAN,
                        lr,
                    });
                }
                state.history.push(MetricRow {
                    epoch,
                    split: name.into(),
                    frame: None,
                    psnr: mp,
                    ms_ssim: ms,
                    loss: f64::NAN,
                    lr,
                });
                log::info!("epoch {epoch}: {name} psnr {mp:.3} ms-ssim {ms:.4}");
            }
            if let (Some(target), Some(reached)) = (cfg.target_psnr, state.last_psnr("train")) {
                if reached >= target {
                    log::info!("epoch {epoch}: target psnr {target} reached");
                    break;
                }
            }
        }
    }
    Ok(())
}

/// Builds, trains and returns a fresh model.
pub fn fit(
    model_cfg: &ModelConfig,
    clip: &VideoClip,
    task: &Task,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainState> {
    let model = Fanerv::new(model_cfg.clone())?;
    let mut state = TrainState::new(model, cfg.seed, cfg.optimizer);
    train(&mut state, clip, task, cfg, loss_cfg)?;
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub base_channels: usize,
    /// Final training PSNR per seed.
    pub psnr_per_seed: Vec<f64>,
    pub psnr_median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains the full model and one variant per disabled component, each sized
/// to `budget` parameters, with identical seeds and schedule.
pub fn run_ablation(
    base: &ModelConfig,
    flags: &[String],
    budget: usize,
    clip: &VideoClip,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut variants = vec![Ablation::default()];
    for f in flags {
        variants.push(Ablation::without(f)?);
    }
    variants
        .into_iter()
        .map(|ablation| {
            let sized = size_model(
                &ModelConfig {
                    ablation,
                    ..base.clone()
                },
                budget,
            )?;
            let model = Fanerv::new(sized.clone())?;
            let psnr_per_seed = seeds
                .iter()
                .map(|&seed| {
                    let run = TrainConfig {
                        seed,
                        eval_every: cfg.epochs,
                        ..cfg.clone()
                    };
                    let state = fit(&sized, clip, &Task::Regression, &run, loss_cfg)?;
                    Ok(state.last_psnr("train").unwrap_or(f64::NAN))
                })
                .collect::<Result<Vec<_>>>()?;
            log::info!("ablation {}: {psnr_per_seed:?}", ablation.label());
            Ok(AblationRow {
                variant: ablation.label(),
                params: model.param_count(),
                base_channels: sized.base_channels,
                psnr_median: median(&psnr_per_seed),
                psnr_per_seed,
            })
        })
        .collect()
}
