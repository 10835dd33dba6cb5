//! `key = value` training configuration covering the model, loss and
//! optimizer settings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::{parse_value, ModelConfig};
use crate::train::loss::{LossConfig, PoseSpace};
use crate::train::optim::OptimConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// Observation : text : instruction shares of each fine-tuning batch.
    pub mix_ratio: [usize; 3],
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            mix_ratio: [2, 1, 1],
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Applies one setting; unknown keys are a configuration error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let o = &mut self.optim;
        match key {
            "lambda_text" => self.loss.lambda_text = parse_value(key, value)?,
            "lambda_pose" => self.loss.lambda_pose = parse_value(key, value)?,
            "pose_space" => {
                self.loss.pose_space = match value.trim() {
                    "matrix" => PoseSpace::Matrix,
                    "6d" => PoseSpace::SixD,
                    other => return Err(Error::Config(format!("unknown pose_space `{other}`"))),
                }
            }
            "learning_rate" => o.learning_rate = parse_value(key, value)?,
            "weight_decay" => o.weight_decay = parse_value(key, value)?,
            "beta1" => o.beta1 = parse_value(key, value)?,
            "beta2" => o.beta2 = parse_value(key, value)?,
            "eps" => o.eps = parse_value(key, value)?,
            "grad_accum_steps" => o.grad_accum_steps = parse_value(key, value)?,
            "batch_size" => o.batch_size = parse_value(key, value)?,
            "max_steps" => o.max_steps = parse_value(key, value)?,
            "rng_seed" => o.rng_seed = parse_value(key, value)?,
            "mix_ratio" => {
                let parts: Vec<&str> = value.trim().split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("mix_ratio `{value}` must look like 2:1:1")));
                }
                for (slot, p) in self.mix_ratio.iter_mut().zip(parts) {
                    *slot = parse_value(key, p)?;
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses the file format: one `key = value` per line, `#` comments.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, "expected `key = value`"))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        TrainConfig::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let o = &self.optim;
        let space = match self.loss.pose_space {
            PoseSpace::Matrix => "matrix",
            PoseSpace::SixD => "6d",
        };
        let entries: [(&str, String); 14] = [
            ("lambda_text", self.loss.lambda_text.to_string()),
            ("lambda_pose", self.loss.lambda_pose.to_string()),
            ("pose_space", space.to_string()),
            ("learning_rate", o.learning_rate.to_string()),
            ("weight_decay", o.weight_decay.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("eps", o.eps.to_string()),
            ("grad_accum_steps", o.grad_accum_steps.to_string()),
            ("batch_size", o.batch_size.to_string()),
            ("max_steps", o.max_steps.to_string()),
            ("rng_seed", o.rng_seed.to_string()),
            (
                "mix_ratio",
                format!("{}:{}:{}", self.mix_ratio[0], self.mix_ratio[1], self.mix_ratio[2]),
            ),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        if self.mix_ratio.contains(&0) {
            return Err(Error::Config("mix_ratio components must be positive".into()));
        }
        Ok(())
    }
}
