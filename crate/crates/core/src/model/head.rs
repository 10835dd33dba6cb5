//! Pose-token embedding extraction and the pose projection head.

use crate::error::{Error, Result};
use crate::model::forward::{linear_backward, linear_forward};
use crate::model::params::{ModelWeights, Trainable, POSE_OUT};
use crate::rotmath::{rot6d_to_matrix, PoseParams, Rot6D, NUM_JOINTS};
use crate::tok::POSE;

/// Hidden state at the position whose output predicts the pose token.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEmbedding(pub Vec<f64>);

impl PoseEmbedding {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Position of the single pose token in `tokens`.
pub fn pose_token_index(tokens: &[u32]) -> Result<usize> {
    let mut found = tokens.iter().enumerate().filter(|(_, &t)| t == POSE).map(|(i, _)| i);
    let first = found.next().ok_or(Error::MissingPoseToken)?;
    let extra = found.count();
    if extra > 0 {
        return Err(Error::MultiplePoseTokens(extra + 1));
    }
    if first == 0 {
        return Err(Error::MissingPoseToken);
    }
    Ok(first)
}

/// Picks the hidden row immediately preceding the pose token. `hidden` holds
/// one `d`-row per token.
pub fn extract_pose_embedding(hidden: &[f64], tokens: &[u32]) -> Result<PoseEmbedding> {
    let idx = pose_token_index(tokens)?;
    if tokens.is_empty() || hidden.len() % tokens.len() != 0 {
        return Err(Error::SizeMismatch(format!(
            "{} hidden values for {} tokens",
            hidden.len(),
            tokens.len()
        )));
    }
    let d = hidden.len() / tokens.len();
    Ok(PoseEmbedding(hidden[(idx - 1) * d..idx * d].to_vec()))
}

/// Intermediate values of one head evaluation.
#[derive(Clone, Debug)]
pub struct HeadCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    /// Raw 6D output, `24 x 6`.
    pub raw: Vec<f64>,
}

pub fn pose_head_raw(w: &ModelWeights, e: &PoseEmbedding) -> HeadCache {
    let l = &w.layout;
    let mut pre = vec![0.0; w.config.d_model];
    linear_forward(w, &l.pose1, &e.0, 1, &mut pre);
    let activation = w.config.pose_activation;
    let act: Vec<f64> = pre.iter().map(|&v| activation.apply(v)).collect();
    let mut raw = vec![0.0; POSE_OUT];
    linear_forward(w, &l.pose2, &act, 1, &mut raw);
    HeadCache {
        input: e.0.clone(),
        pre,
        act,
        raw,
    }
}

/// The projection `g(H_pose)`: MLP to 24 raw 6D vectors, each made a
/// rotation by Gram-Schmidt.
pub fn pose_head(w: &ModelWeights, e: &PoseEmbedding) -> Result<PoseParams> {
    if !e.is_finite() {
        return Err(Error::DegenerateInput("non-finite pose embedding".into()));
    }
    raw_to_pose(&pose_head_raw(w, e).raw)
}

pub fn raw_to_pose(raw: &[f64]) -> Result<PoseParams> {
    let rotations = raw
        .chunks(6)
        .take(NUM_JOINTS)
        .map(|c| rot6d_to_matrix(&Rot6D::from_slice(c)))
        .collect::<Result<Vec<_>>>()?;
    PoseParams::new(rotations)
}

/// Backward through the head from the raw-output gradient; returns the
/// gradient with respect to the embedding.
pub fn pose_head_backward(
    w: &ModelWeights,
    cache: &HeadCache,
    d_raw: &[f64],
    grads: &mut [f64],
    trainable: &Trainable,
) -> Vec<f64> {
    let l = &w.layout;
    let d = w.config.d_model;
    let mut d_act = vec![0.0; d];
    linear_backward(w, &l.pose2, &cache.act, &[], d_raw, 1, Some(&mut d_act), grads, trainable);
    let activation = w.config.pose_activation;
    for (g, &p) in d_act.iter_mut().zip(&cache.pre) {
        *g *= activation.derivative(p);
    }
    let mut de = vec![0.0; d];
    linear_backward(w, &l.pose1, &cache.input, &[], &d_act, 1, Some(&mut de), grads, trainable);
    de
}
