//! Run configuration: typed defaults, a flat `key = value` file format with
//! `[section]` headers, and dotted overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fanerv_core::compress::FinetuneConfig;
use fanerv_core::data::{LoadOptions, MaskSpec};
use fanerv_core::losses::LossConfig;
use fanerv_core::model::{size_model, ModelConfig};
use fanerv_core::optim::OptimizerConfig;
use fanerv_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Frame directory or raw file; empty for the synthetic clip.
    pub path: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub crop: Option<Vec<usize>>,
    pub resize: Option<Vec<usize>>,
    pub max_frames: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: String::new(),
            frames: 8,
            height: 96,
            width: 160,
            seed: 0,
            crop: None,
            resize: None,
            max_frames: None,
        }
    }
}

fn pair(key: &str, v: &Option<Vec<usize>>) -> Result<Option<(usize, usize)>> {
    match v.as_deref() {
        None => Ok(None),
        Some([h, w]) => Ok(Some((*h, *w))),
        Some(_) => bail!("data.{key}: expected `height,width`"),
    }
}

impl DataConfig {
    pub fn load_options(&self, stride: usize) -> Result<LoadOptions> {
        Ok(LoadOptions {
            crop: pair("crop", &self.crop)?,
            resize: pair("resize", &self.resize)?,
            stride: Some(stride),
            max_frames: self.max_frames,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    /// `center` or `scatter`.
    pub mask: String,
    pub mask_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            mask: "center".into(),
            mask_seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn mask_spec(&self) -> Result<MaskSpec> {
        match self.mask.as_str() {
            "center" => Ok(MaskSpec::Center),
            "scatter" => Ok(MaskSpec::scatter(self.mask_seed)),
            other => bail!("task.mask: unknown mask {other:?} (expected center or scatter)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressConfig {
    pub bits: u32,
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    pub lr0: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            bits: f.bits,
            lambdas: vec![0.0, 30.0, 300.0],
            epochs: f.epochs,
            lr0: f.lr0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateConfig {
    pub flags: Vec<String>,
    /// Parameter budget; the base model's own count when absent.
    pub budget: Option<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            flags: ["wfub", "fsfb", "tgfn", "creb"].map(String::from).to_vec(),
            budget: None,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub task: TaskConfig,
    pub compress: CompressConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig {
                decoder_strides: vec![2, 2, 2, 2, 2],
                encoder_channels: 16,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            task: TaskConfig::default(),
            compress: CompressConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> Value {
    let t = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(t) {
        return v;
    }
    Value::String(t.trim_matches('"').to_string())
}

fn parse_like(existing: &Value, raw: &str, key: &str) -> Result<Value> {
    let raw = raw.trim();
    let bad = |what: &str| anyhow!("invalid value for {key}: {raw:?} is not {what}");
    Ok(match existing {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("a boolean"))?),
        Value::Number(_) => {
            let v = parse_scalar(raw);
            if !v.is_number() {
                return Err(bad("a number"));
            }
            v
        }
        Value::String(_) => Value::String(raw.trim_matches('"').to_string()),
        Value::Array(items) => {
            let inner = raw.trim_start_matches('[').trim_end_matches(']');
            if inner.trim().is_empty() {
                Value::Array(Vec::new())
            } else {
                let proto = items.first().cloned().unwrap_or(Value::Null);
                Value::Array(
                    inner
                        .split(',')
                        .map(|p| parse_like(&proto, p, key))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        }
        Value::Null | Value::Object(_) => {
            if raw.contains(',') && !raw.starts_with(['[', '{']) {
                Value::Array(raw.split(',').map(parse_scalar).collect())
            } else {
                parse_scalar(raw)
            }
        }
    })
}

/// Sets `key` (dotted path) in `root`. Only keys present in the defaults are
/// accepted.
pub fn set_key(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key == "train.optimizer" {
        let opt = match raw.trim() {
            "adan" => OptimizerConfig::adan(),
            "adamw" => OptimizerConfig::adamw(),
            other => bail!("invalid value for {key}: unknown optimizer {other:?}"),
        };
        root["train"]["optimizer"] = serde_json::to_value(opt)?;
        return Ok(());
    }
    let mut node = &mut *root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
    }
    *node = parse_like(node, raw, key)?;
    Ok(())
}

/// `key = value` lines; `[section]` prefixes following keys with
/// `section.`; `#` starts a comment.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = s.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
        let k = k.trim();
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| anyhow!("override {arg:?} is not of the form key=value"))
}

impl RunConfig {
    /// Defaults, then the file, then the overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_file(&text).with_context(|| format!("in {}", path.display()))? {
                set_key(&mut root, &k, &v)?;
            }
        }
        for (k, v) in overrides {
            set_key(&mut root, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(root).context("config does not match the expected schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.task.mask_spec()?;
        pair("crop", &self.data.crop)?;
        pair("resize", &self.data.resize)?;
        if self.compress.lambdas.iter().any(|l| !(*l >= 0.0)) {
            bail!("invalid value for compress.lambdas: must be non-negative");
        }
        if self.ablate.seeds.is_empty() {
            bail!("invalid value for ablate.seeds: needs at least one seed");
        }
        Ok(())
    }

    /// Applies `model.target_params` through the sizing search so the
    /// resolved config records the actual widths.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(target) = self.model.target_params {
            self.model = size_model(&self.model, target)?;
        }
        Ok(self)
    }

    pub fn finetune(&self, lambda: f64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.compress.epochs,
            lr0: self.compress.lr0,
            bits: self.compress.bits,
            lambda,
            seed: self.train.seed,
            ..FinetuneConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sections_and_overrides() {
        let text = "# comment\n[train]\nepochs = 5\nlr0 = 1e-3\n[model]\ndecoder_strides = 2,2,2\n[model.ablation]\nwfub = false\n";
        let mut ov: Vec<(String, String)> = parse_file(text).unwrap();
        ov.push(("train.epochs".into(), "7".into()));
        ov.push(("train.optimizer".into(), "adamw".into()));
        ov.push(("model.target_params".into(), "5000".into()));
        let mut root = serde_json::to_value(RunConfig::default()).unwrap();
        for (k, v) in &ov {
            set_key(&mut root, k, v).unwrap();
        }
        let cfg: RunConfig = serde_json::from_value(root).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr0, 1e-3);
        assert_eq!(cfg.model.decoder_strides, vec![2, 2, 2]);
        assert!(!cfg.model.ablation.wfub);
        assert_eq!(cfg.train.optimizer, OptimizerConfig::adamw());
        assert_eq!(cfg.model.target_params, Some(5000));
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_key() {
        let mut root = serde_json::to_value(RunConfig::default()).unwrap();
        let e = set_key(&mut root, "train.epoch", "3").unwrap_err();
        assert!(e.to_string().contains("train.epoch"));
        let e = set_key(&mut root, "train.epochs", "many").unwrap_err();
        assert!(e.to_string().contains("train.epochs"));
        assert!(parse_override("novalue").is_err());
    }
}
