use super::{Fanerv, ModelConfig};
use crate::error::{Error, Result};

const LOW: f64 = 0.97;
const HIGH: f64 = 1.03;
const MAX_BASE: usize = 4096;
const MAX_ENCODER: usize = 1024;

/// Trainable parameters of encoder, decoder and temporal network.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(Fanerv::new(cfg.clone())?.param_count())
}

fn with_base(cfg: &ModelConfig, base: usize) -> ModelConfig {
    ModelConfig {
        base_channels: base,
        ..cfg.clone()
    }
}

/// Largest `x` in `lo..=hi` with `f(x) <= target`, assuming `f` increases.
fn largest_below(lo: usize, hi: usize, target: usize, f: impl Fn(usize) -> Result<usize>) -> Result<Option<usize>> {
    if f(lo)? > target {
        return Ok(None);
    }
    let (mut lo, mut hi) = (lo, hi);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if f(mid)? <= target {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(Some(lo))
}

/// Picks `base_channels` (and if needed `encoder_channels`) so the total
/// parameter count lands within 3% of `target`.
pub fn size_model(cfg: &ModelConfig, target: usize) -> Result<ModelConfig> {
    cfg.validate()?;
    let in_band = |n: usize| {
        let n = n as f64;
        n >= LOW * target as f64 && n <= HIGH * target as f64
    };
    let min_base = cfg.min_channels;
    let count = |base: usize| count_params(&with_base(cfg, base));
    let min = count(min_base)?;
    let max = count(MAX_BASE)?;
    let sizing_err = || Error::Sizing { target, min, max };
    if (min as f64) > HIGH * target as f64 || (max as f64) < LOW * target as f64 {
        return Err(sizing_err());
    }

    let finish = |c: ModelConfig| ModelConfig {
        target_params: Some(target),
        ..c
    };
    let base = largest_below(min_base, MAX_BASE, target, count)?.unwrap_or(min_base);
    for b in [base + 1, base] {
        if b >= min_base && in_band(count(b)?) {
            return Ok(finish(with_base(cfg, b)));
        }
    }

    // the base width is too coarse here; fill the gap with encoder width
    for b in [base, base + 1] {
        let c = with_base(cfg, b);
        let enc_count = |e: usize| {
            count_params(&ModelConfig {
                encoder_channels: e,
                ..c.clone()
            })
        };
        let Some(e) = largest_below(1, MAX_ENCODER, target, enc_count)? else {
            continue;
        };
        for e in [e + 1, e] {
            if in_band(enc_count(e)?) {
                return Ok(finish(ModelConfig {
                    encoder_channels: e,
                    ..c
                }));
            }
        }
    }
    Err(sizing_err())
}
