use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ObservationSeq;
use crate::error::{Error, Result};
use crate::model::forward::{forward_trace, lm_logits};
use crate::model::head::{pose_head, PoseEmbedding};
use crate::model::kernels::{argmax, softmax_in_place};
use crate::model::params::ModelWeights;
use crate::rotmath::PoseParams;
use crate::tok::{EOS, POSE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sampled { seed: u64, temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Newly generated ids, including the final EOS when one was produced.
    pub tokens: Vec<u32>,
    /// Pose decoded from the state that emitted the first pose token.
    pub pose: Option<PoseParams>,
}

/// Autoregressive decoding from `prompt` until EOS, `max_new` tokens or the
/// context limit.
pub fn generate(
    w: &ModelWeights,
    obs: Option<&ObservationSeq>,
    prompt: &[u32],
    max_new: usize,
    mode: DecodeMode,
) -> Result<Generation> {
    let d = w.config.d_model;
    let mut rng = match mode {
        DecodeMode::Sampled { seed, temperature } => {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::Config("sampling temperature must be positive".into()));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        DecodeMode::Greedy => None,
    };
    let prefix = obs.map_or(0, |o| o.len());
    let mut seq = prompt.to_vec();
    let mut out = Generation {
        tokens: Vec::new(),
        pose: None,
    };
    for _ in 0..max_new {
        if prefix + seq.len() >= w.config.max_seq && !out.tokens.is_empty() {
            break;
        }
        let trace = forward_trace(w, obs, &seq)?;
        let last = &trace.hidden[(trace.n - 1) * d..trace.n * d];
        let (mut logits, _) = lm_logits(w, last, 1);
        let next = match (&mut rng, mode) {
            (Some(rng), DecodeMode::Sampled { temperature, .. }) => {
                for v in logits.iter_mut() {
                    *v /= temperature;
                }
                softmax_in_place(&mut logits);
                sample(rng, &logits)
            }
            _ => argmax(&logits),
        } as u32;
        if next == POSE && out.pose.is_none() {
            out.pose = Some(pose_head(w, &PoseEmbedding(last.to_vec()))?);
        }
        seq.push(next);
        out.tokens.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
