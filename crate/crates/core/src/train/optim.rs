use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_accum_steps: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub rng_seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 2e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_accum_steps: 2,
            batch_size: 16,
            max_steps: 1000,
            rng_seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.grad_accum_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("grad_accum_steps and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment state with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> AdamW {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update of the parameters selected by `mask`; the others are not
    /// touched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], mask: &[bool], cfg: &OptimConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || mask.len() != params.len() {
            return Err(Error::SizeMismatch(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = params[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}
