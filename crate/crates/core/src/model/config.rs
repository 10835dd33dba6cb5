use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Hidden nonlinearity of the pose head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub d_obs: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub pose_activation: Activation,
    /// Whether the pose loss gradient flows back through the hidden state
    /// into the language model, or stops at the head.
    pub pose_grad_to_lm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq: 256,
            vocab_size: 0,
            d_obs: 16,
            lora_rank: 8,
            lora_alpha: 16.0,
            pose_activation: Activation::Gelu,
            pose_grad_to_lm: true,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
            ("vocab_size", self.vocab_size),
            ("d_obs", self.d_obs),
            ("lora_rank", self.lora_rank),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lora_rank >= self.d_model {
            return Err(Error::Config(format!(
                "lora_rank {} must be below d_model {}",
                self.lora_rank, self.d_model
            )));
        }
        if !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return Err(Error::Config("lora_alpha must be positive".into()));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order, as used by the checkpoint header
    /// and the training config file.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("max_seq", self.max_seq.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("d_obs", self.d_obs.to_string()),
            ("lora_rank", self.lora_rank.to_string()),
            ("lora_alpha", self.lora_alpha.to_string()),
            ("pose_activation", self.pose_activation.to_string()),
            ("pose_grad_to_lm", self.pose_grad_to_lm.to_string()),
        ]
    }

    /// Sets one field by name. Returns `Ok(false)` when the key is not a
    /// model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d_model" => self.d_model = parse_value(key, value)?,
            "n_layers" => self.n_layers = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "max_seq" => self.max_seq = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "d_obs" => self.d_obs = parse_value(key, value)?,
            "lora_rank" => self.lora_rank = parse_value(key, value)?,
            "lora_alpha" => self.lora_alpha = parse_value(key, value)?,
            "pose_activation" => self.pose_activation = value.parse()?,
            "pose_grad_to_lm" => self.pose_grad_to_lm = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::with_vocab(100).validate().unwrap();
        assert!(ModelConfig::default().validate().is_err());
    }

    #[test]
    fn rejects_bad_heads_and_rank() {
        let mut c = ModelConfig::with_vocab(10);
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::with_vocab(10);
        c.lora_rank = 64;
        assert!(c.validate().is_err());
    }

    #[test]
    fn entries_round_trip_through_set() {
        let mut c = ModelConfig::with_vocab(77);
        c.pose_activation = Activation::Tanh;
        c.lora_alpha = 12.5;
        let mut d = ModelConfig::default();
        for (k, v) in c.entries() {
            assert!(d.set(k, &v).unwrap());
        }
        assert_eq!(c, d);
        assert!(!d.set("learning_rate", "1").unwrap());
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
