use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which refinement components are present. All `true` is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub wfub: bool,
    pub fsfb: bool,
    pub tgfn: bool,
    pub creb: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            wfub: true,
            fsfb: true,
            tgfn: true,
            creb: true,
        }
    }
}

impl Ablation {
    /// Full model with the named component switched off.
    pub fn without(component: &str) -> Result<Self> {
        let mut a = Self::default();
        match component {
            "wfub" => a.wfub = false,
            "fsfb" => a.fsfb = false,
            "tgfn" => a.tgfn = false,
            "creb" => a.creb = false,
            other => {
                return Err(Error::Config {
                    key: "ablation".into(),
                    reason: format!("unknown component {other:?} (expected wfub, fsfb, tgfn or creb)"),
                })
            }
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        let off: Vec<&str> = [
            (self.wfub, "wfub"),
            (self.fsfb, "fsfb"),
            (self.tgfn, "tgfn"),
            (self.creb, "creb"),
        ]
        .into_iter()
        .filter(|(on, _)| !on)
        .map(|(_, n)| n)
        .collect();
        if off.is_empty() {
            "full".into()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }
}

/// Complete architectural hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Upsampling factor of each decoder stage, input side first.
    pub decoder_strides: Vec<usize>,
    /// Width of the decoder stem, i.e. the input width of stage 0.
    pub base_channels: usize,
    pub channel_reduction: f64,
    pub min_channels: usize,
    /// Channels of the content embedding.
    pub embed_channels: usize,
    pub encoder_channels: usize,
    /// Number of sin/cos frequency pairs in the temporal encoding.
    pub pe_frequencies: usize,
    pub temporal_hidden: usize,
    pub nerv_kernel: usize,
    pub fsfb_kernels: Vec<usize>,
    pub fsfb_dilations: Vec<usize>,
    /// Channel expansion inside the high-frequency branch.
    pub high_expansion: usize,
    /// Hidden width multiplier of the gated feed-forward network.
    pub tgfn_expansion: usize,
    pub creb_count: usize,
    pub target_params: Option<usize>,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            decoder_strides: vec![5, 2, 2, 2, 2],
            base_channels: 64,
            channel_reduction: 1.4,
            min_channels: 12,
            embed_channels: 16,
            encoder_channels: 32,
            pe_frequencies: 16,
            temporal_hidden: 64,
            nerv_kernel: 3,
            fsfb_kernels: vec![5, 7, 9, 11],
            fsfb_dilations: vec![1, 2, 3, 4],
            high_expansion: 2,
            tgfn_expansion: 2,
            creb_count: 2,
            target_params: None,
            ablation: Ablation::default(),
        }
    }
}

/// One decoder stage as derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub index: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_wfub: bool,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

impl ModelConfig {
    pub fn total_stride(&self) -> usize {
        self.decoder_strides.iter().product()
    }

    /// `max(round(c / reduction), min_channels)`.
    pub fn reduce(&self, channels: usize) -> usize {
        ((channels as f64 / self.channel_reduction).round() as usize).max(self.min_channels)
    }

    /// Checks the invariants that do not depend on the frame size.
    pub fn validate(&self) -> Result<()> {
        if self.decoder_strides.is_empty() || self.decoder_strides.contains(&0) {
            return Err(config_err("decoder_strides", "need at least one positive stride"));
        }
        if !(self.channel_reduction > 1.0) {
            return Err(config_err("channel_reduction", "must be > 1"));
        }
        if self.min_channels == 0 || self.base_channels < self.min_channels {
            return Err(config_err(
                "base_channels",
                format!(
                    "need base_channels ({}) >= min_channels ({}) >= 1",
                    self.base_channels, self.min_channels
                ),
            ));
        }
        if self.fsfb_kernels.len() != self.fsfb_dilations.len() || self.fsfb_kernels.is_empty() {
            return Err(config_err("fsfb_kernels", "kernel and dilation lists must have equal, nonzero length"));
        }
        if self.fsfb_kernels.iter().any(|k| k % 2 == 0) || self.nerv_kernel % 2 == 0 {
            return Err(config_err("fsfb_kernels", "kernel sizes must be odd"));
        }
        if self.fsfb_dilations.contains(&0) {
            return Err(config_err("fsfb_dilations", "dilations must be positive"));
        }
        if self.embed_channels == 0 || self.encoder_channels == 0 {
            return Err(config_err("embed_channels", "must be positive"));
        }
        if self.pe_frequencies == 0 || self.temporal_hidden == 0 {
            return Err(config_err("pe_frequencies", "must be positive"));
        }
        if self.high_expansion == 0 || self.tgfn_expansion == 0 {
            return Err(config_err("tgfn_expansion", "must be positive"));
        }
        Ok(())
    }

    /// Frame size must be divisible by the total stride.
    pub fn check_frame(&self, height: usize, width: usize) -> Result<()> {
        let s = self.total_stride();
        if height == 0 || width == 0 || height % s != 0 || width % s != 0 {
            return Err(Error::shape(format!(
                "frame {height}x{width} is not divisible by the total stride {s}"
            )));
        }
        Ok(())
    }

    /// Refinement blocks sit only on stride-2 stages, where the stage input
    /// has exactly the resolution of the low-frequency subband.
    pub fn stages(&self) -> Vec<StageSpec> {
        let mut in_channels = self.base_channels;
        self.decoder_strides
            .iter()
            .enumerate()
            .map(|(index, &stride)| {
                let out_channels = self.reduce(in_channels);
                let spec = StageSpec {
                    index,
                    stride,
                    in_channels,
                    out_channels,
                    has_wfub: self.ablation.wfub && stride == 2,
                };
                in_channels = out_channels;
                spec
            })
            .collect()
    }

    pub fn final_channels(&self) -> usize {
        self.stages().last().map_or(self.base_channels, |s| s.out_channels)
    }

    /// Stages whose refinement block consumes temporal modulation.
    pub fn modulated_stages(&self) -> Vec<StageSpec> {
        if !self.ablation.tgfn {
            return Vec::new();
        }
        self.stages().into_iter().filter(|s| s.has_wfub).collect()
    }
}
