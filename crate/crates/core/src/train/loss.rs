//! The combined text and pose objective and its exact gradient.

use nalgebra::Matrix3;

use crate::data::{ChatRecord, ObservationSeq};
use crate::error::{Error, Result};
use crate::model::forward::{backward as lm_trunk_backward, forward_trace, lm_backward, lm_logits};
use crate::model::head::{pose_head_backward, pose_head_raw, pose_token_index, raw_to_pose, PoseEmbedding};
use crate::model::kernels::log_sum_exp;
use crate::model::params::{ModelWeights, Trainable, POSE_OUT};
use crate::rotmath::{rot6d_to_matrix, rot6d_to_matrix_vjp, Rot6D, NUM_JOINTS};
use crate::tok::Vocab;

const MATRIX_ELEMENTS: usize = NUM_JOINTS * 9;

/// Where the pose L1 term is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PoseSpace {
    /// Elements of the 24 rotation matrices after Gram-Schmidt.
    #[default]
    Matrix,
    /// The 144 raw head outputs against the target's 6D columns.
    SixD,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_text: f64,
    pub lambda_pose: f64,
    pub pose_space: PoseSpace,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_text: 1.0,
            lambda_pose: 0.1,
            pose_space: PoseSpace::Matrix,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_text >= 0.0 && self.lambda_pose >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn combine(&self, ce: f64, pose_l1: f64) -> f64 {
        self.lambda_text * ce + self.lambda_pose * pose_l1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    pub ce: f64,
    pub pose_l1: f64,
    pub total: f64,
}

/// One record as model inputs: the teacher-forced ids (final EOS excluded),
/// which positions are scored, and the supervised pose.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: Vec<u32>,
    pub targets: Vec<u32>,
    /// First input position whose next-token target is part of the answer.
    pub first_scored: usize,
    pub obs: Option<ObservationSeq>,
    /// Input position whose hidden state feeds the pose head.
    pub pose_position: Option<usize>,
    /// Row-major rotation matrices, `24 x 9`.
    pub target_matrices: Option<Vec<f64>>,
    pub target_6d: Option<Vec<f64>>,
}

impl Example {
    pub fn encode(vocab: &Vocab, record: &ChatRecord) -> Result<Example> {
        let (ids, answer_start) = vocab.dialogue_ids(&record.question, &record.answer);
        let input = ids[..ids.len() - 1].to_vec();
        let targets = ids[1..].to_vec();
        let pose_position = match &record.target_pose {
            Some(_) => {
                let idx = pose_token_index(&ids)?;
                if idx < answer_start {
                    return Err(Error::InvalidRecord("pose token in the question".into()));
                }
                Some(idx - 1)
            }
            None => None,
        };
        Ok(Example {
            input,
            targets,
            first_scored: answer_start - 1,
            obs: record.observation.clone(),
            pose_position,
            target_matrices: record.target_pose.as_ref().map(|p| p.to_matrix_elements()),
            target_6d: record.target_pose.as_ref().map(|p| p.to_6d()),
        })
    }

    pub fn scored_tokens(&self) -> usize {
        self.input.len() - self.first_scored
    }
}

/// Global denominators of the two terms over an effective batch, so that
/// splitting the batch into micro-batches does not change the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Normalizer {
    pub tokens: usize,
    pub poses: usize,
}

impl Normalizer {
    pub fn of(examples: &[&Example]) -> Normalizer {
        Normalizer {
            tokens: examples.iter().map(|e| e.scored_tokens()).sum(),
            poses: examples.iter().filter(|e| e.pose_position.is_some()).count(),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of |prediction - target| in the configured space, and optionally its
/// gradient with respect to the raw head output.
fn pose_l1(raw: &[f64], ex: &Example, space: PoseSpace, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let mut d_raw = if want_grad { vec![0.0; POSE_OUT] } else { Vec::new() };
    let mut sum = 0.0;
    match space {
        PoseSpace::SixD => {
            let target = ex.target_6d.as_ref().expect("pose example");
            for i in 0..POSE_OUT {
                let diff = raw[i] - target[i];
                sum += diff.abs();
                if want_grad {
                    d_raw[i] = sign(diff);
                }
            }
        }
        PoseSpace::Matrix => {
            let target = ex.target_matrices.as_ref().expect("pose example");
            for j in 0..NUM_JOINTS {
                let r6 = Rot6D::from_slice(&raw[j * 6..(j + 1) * 6]);
                let m = rot6d_to_matrix(&r6)?;
                let pred = m.to_row_major();
                let mut g = Matrix3::zeros();
                for e in 0..9 {
                    let diff = pred[e] - target[j * 9 + e];
                    sum += diff.abs();
                    g[(e / 3, e % 3)] = sign(diff);
                }
                if want_grad {
                    let v = rot6d_to_matrix_vjp(&r6, &g)?;
                    d_raw[j * 6..(j + 1) * 6].copy_from_slice(&v);
                }
            }
        }
    }
    Ok((sum, d_raw))
}

fn pose_count(space: PoseSpace) -> f64 {
    match space {
        PoseSpace::Matrix => MATRIX_ELEMENTS as f64,
        PoseSpace::SixD => POSE_OUT as f64,
    }
}

/// Loss contribution of `examples` under the normalizer of the enclosing
/// effective batch. When `grads` is given, adds the gradient of that
/// contribution for the `trainable` groups. Contributions of micro-batches
/// sum to the loss of the whole effective batch.
pub fn accumulate(
    w: &ModelWeights,
    examples: &[&Example],
    cfg: &LossConfig,
    norm: Normalizer,
    mut grads: Option<&mut [f64]>,
    trainable: &Trainable,
) -> Result<LossComponents> {
    let d = w.config.d_model;
    let v = w.config.vocab_size;
    let tok_scale = if norm.tokens > 0 { 1.0 / norm.tokens as f64 } else { 0.0 };
    let pose_scale = if norm.poses > 0 {
        1.0 / (norm.poses as f64 * pose_count(cfg.pose_space))
    } else {
        0.0
    };
    let mut ce = 0.0;
    let mut l1 = 0.0;
    for ex in examples {
        let trace = forward_trace(w, ex.obs.as_ref(), &ex.input)?;
        let t = trace.token_count();
        let hidden = trace.token_hidden(d);
        let (mut logits, xa) = lm_logits(w, hidden, t);

        let mut ce_sum = 0.0;
        for p in ex.first_scored..t {
            let row = &mut logits[p * v..(p + 1) * v];
            let target = ex.targets[p] as usize;
            let lse = log_sum_exp(row);
            ce_sum += lse - row[target];
            if grads.is_some() {
                let g = cfg.lambda_text * tok_scale;
                for x in row.iter_mut() {
                    *x = (*x - lse).exp() * g;
                }
                row[target] -= g;
            }
        }
        ce += ce_sum * tok_scale;

        let mut pose_part = None;
        if let Some(pos) = ex.pose_position {
            let e = PoseEmbedding(hidden[pos * d..(pos + 1) * d].to_vec());
            let cache = pose_head_raw(w, &e);
            let (sum, d_raw) = pose_l1(&cache.raw, ex, cfg.pose_space, grads.is_some())?;
            l1 += sum * pose_scale;
            pose_part = Some((pos, cache, d_raw));
        }

        if let Some(grads) = grads.as_deref_mut() {
            for p in 0..ex.first_scored.min(t) {
                logits[p * v..(p + 1) * v].fill(0.0);
            }
            let mut d_hidden_tokens = lm_backward(w, hidden, &xa, &logits, t, grads, trainable);
            if let Some((pos, cache, mut d_raw)) = pose_part {
                let g = cfg.lambda_pose * pose_scale;
                for x in d_raw.iter_mut() {
                    *x *= g;
                }
                let de = pose_head_backward(w, &cache, &d_raw, grads, trainable);
                if w.config.pose_grad_to_lm {
                    for (a, b) in d_hidden_tokens[pos * d..(pos + 1) * d].iter_mut().zip(&de) {
                        *a += b;
                    }
                }
            }
            let mut d_hidden = vec![0.0; trace.n * d];
            d_hidden[trace.prefix * d..].copy_from_slice(&d_hidden_tokens);
            lm_trunk_backward(w, &trace, &d_hidden, grads, trainable);
        }
    }
    Ok(LossComponents {
        ce,
        pose_l1: l1,
        total: cfg.combine(ce, l1),
    })
}

/// Loss of a batch on its own.
pub fn loss(w: &ModelWeights, examples: &[&Example], cfg: &LossConfig) -> Result<LossComponents> {
    accumulate(w, examples, cfg, Normalizer::of(examples), None, &Trainable::none())
}

/// Loss and gradient of a batch on its own.
pub fn loss_and_grad(
    w: &ModelWeights,
    examples: &[&Example],
    cfg: &LossConfig,
    trainable: &Trainable,
) -> Result<(LossComponents, Vec<f64>)> {
    let mut grads = vec![0.0; w.params.len()];
    let c = accumulate(w, examples, cfg, Normalizer::of(examples), Some(&mut grads), trainable)?;
    Ok((c, grads))
}

/// Pose decoded by the head at the supervised position, for inspection.
pub fn teacher_forced_pose(w: &ModelWeights, ex: &Example) -> Result<crate::rotmath::PoseParams> {
    let pos = ex.pose_position.ok_or(Error::MissingPoseToken)?;
    let trace = forward_trace(w, ex.obs.as_ref(), &ex.input)?;
    let d = w.config.d_model;
    let e = PoseEmbedding(trace.token_hidden(d)[pos * d..(pos + 1) * d].to_vec());
    raw_to_pose(&pose_head_raw(w, &e).raw)
}
