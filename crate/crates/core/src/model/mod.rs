//! Decoder-only transformer with an observation prefix, the pose head and
//! low-rank adapters.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod generate;
pub mod head;
pub mod kernels;
pub mod params;

pub use checkpoint::{content_hash, Checkpoint, CheckpointMeta};
pub use config::{Activation, ModelConfig};
pub use forward::{forward, ForwardOutput};
pub use generate::{generate, DecodeMode, Generation};
pub use head::{extract_pose_embedding, pose_head, PoseEmbedding};
pub use params::{Group, ModelWeights, Trainable};

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::head::{pose_head_backward, pose_head_raw};
    use super::*;
    use crate::data::ObservationSeq;
    use crate::error::Error;
    use crate::rotmath::{PoseParams, NUM_JOINTS};
    use crate::tok::{BOS, EOS, POSE};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq: 64,
            vocab_size: 30,
            d_obs: 4,
            lora_rank: 3,
            ..ModelConfig::default()
        }
    }

    fn obs(persons: usize, seed: u64) -> ObservationSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ObservationSeq {
            person_count: persons,
            d_obs: 4,
            vectors: (0..persons * NUM_JOINTS * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn randomize_adapters(w: &mut ModelWeights, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots: Vec<usize> = w
            .layout
            .adapted_linears()
            .iter()
            .map(|l| l.adapter.unwrap().b)
            .collect();
        for s in slots {
            for p in w.tensor_mut(s) {
                *p = rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn output_shapes() {
        let w = ModelWeights::init(&cfg(), 1).unwrap();
        let toks = [BOS, 9, 10, 11];
        let out = forward(&w, None, &toks).unwrap();
        assert_eq!(out.logits.len(), 4 * 30);
        assert_eq!(out.hidden.len(), 4 * 16);
        let o = obs(1, 2);
        let out = forward(&w, Some(&o), &toks).unwrap();
        assert_eq!(out.token_count, 4);
        assert_eq!(out.logits.len(), 4 * 30);
    }

    #[test]
    fn too_long_is_rejected() {
        let w = ModelWeights::init(&cfg(), 1).unwrap();
        let toks = vec![9u32; 41];
        assert!(forward(&w, None, &toks).is_ok());
        assert!(matches!(
            forward(&w, Some(&obs(1, 2)), &toks),
            Err(Error::SequenceTooLong { len: 65, max: 64 })
        ));
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let w = ModelWeights::init(&cfg(), 3).unwrap();
        let o = obs(1, 4);
        let a = [BOS, 9, 10, 11, 12, 13];
        for t in 1..a.len() {
            let mut b = a;
            b[t] = 20;
            let fa = forward(&w, Some(&o), &a).unwrap();
            let fb = forward(&w, Some(&o), &b).unwrap();
            for p in 0..t {
                assert_eq!(fa.logits_at(p), fb.logits_at(p), "position {p} saw token {t}");
            }
            assert_ne!(fa.logits_at(t), fb.logits_at(t));
        }
    }

    #[test]
    fn observation_reaches_every_token() {
        let w = ModelWeights::init(&cfg(), 3).unwrap();
        let toks = [BOS, 9, 10];
        let fa = forward(&w, Some(&obs(1, 1)), &toks).unwrap();
        let fb = forward(&w, Some(&obs(1, 2)), &toks).unwrap();
        for p in 0..3 {
            assert_ne!(fa.logits_at(p), fb.logits_at(p));
        }
    }

    #[test]
    fn fresh_adapters_are_bitwise_identity() {
        let base = ModelWeights::init(&cfg(), 5).unwrap();
        let adapted = base.with_adapters(6).unwrap();
        let o = obs(2, 7);
        let toks = [BOS, 4, 9, 10, 5, 11, POSE, EOS];
        let a = forward(&base, Some(&o), &toks).unwrap();
        let b = forward(&adapted, Some(&o), &toks).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merged_matches_adapted() {
        let base = ModelWeights::init(&cfg(), 5).unwrap();
        let mut adapted = base.with_adapters(6).unwrap();
        randomize_adapters(&mut adapted, 8);
        let merged = adapted.merge_adapters().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let len = rng.random_range(1..20);
            let toks: Vec<u32> = (0..len).map(|_| rng.random_range(0..30)).collect();
            let o = (trial % 2 == 0).then(|| obs(1, trial));
            let a = forward(&adapted, o.as_ref(), &toks).unwrap();
            let m = forward(&merged, o.as_ref(), &toks).unwrap();
            let diff = a
                .logits
                .iter()
                .zip(&m.logits)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "trial {trial}: {diff}");
        }
        assert_eq!(adapted.without_adapters(), base);
    }

    #[test]
    fn extraction_takes_the_predicting_position() {
        let hidden: Vec<f64> = (0..5 * 2).map(|v| v as f64).collect();
        let e = extract_pose_embedding(&hidden, &[1, 8, 9, POSE, 2]).unwrap();
        assert_eq!(e.0, vec![4.0, 5.0]);
        assert!(matches!(extract_pose_embedding(&hidden, &[1, 8, 9, 10, 2]), Err(Error::MissingPoseToken)));
        assert!(matches!(
            extract_pose_embedding(&hidden, &[1, POSE, 9, POSE, 2]),
            Err(Error::MultiplePoseTokens(2))
        ));
    }

    #[test]
    fn zero_head_gives_identity_pose() {
        let mut w = ModelWeights::init(&cfg(), 1).unwrap();
        let l = w.layout.clone();
        for s in [l.pose1.w, l.pose1.b.unwrap(), l.pose2.w] {
            w.tensor_mut(s).fill(0.0);
        }
        let p = pose_head(&w, &PoseEmbedding(vec![0.0; 16])).unwrap();
        assert_eq!(p, PoseParams::identity());
    }

    #[test]
    fn head_outputs_are_rotations() {
        let w = ModelWeights::init(&cfg(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let e = PoseEmbedding((0..16).map(|_| rng.random_range(-5.0..5.0)).collect());
            let p = pose_head(&w, &e).unwrap();
            for r in p.rotations() {
                let m = r.matrix();
                assert!((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-6);
                assert!((m.determinant() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn head_jacobian_matches_differences() {
        let mut w = ModelWeights::init(&cfg(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = w.layout.pose2.w;
        for p in w.tensor_mut(s) {
            *p = rng.random_range(-0.5..0.5);
        }
        let e: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = pose_head_raw(&w, &PoseEmbedding(e.clone()));
        let mut grads = vec![0.0; w.params.len()];
        for out in (0..144).step_by(7) {
            let mut d_raw = vec![0.0; 144];
            d_raw[out] = 1.0;
            let de = pose_head_backward(&w, &cache, &d_raw, &mut grads, &Trainable::none());
            for i in 0..16 {
                let h = 1e-6;
                let mut ep = e.clone();
                ep[i] += h;
                let mut em = e.clone();
                em[i] -= h;
                let fd = (pose_head_raw(&w, &PoseEmbedding(ep)).raw[out]
                    - pose_head_raw(&w, &PoseEmbedding(em)).raw[out])
                    / (2.0 * h);
                let rel = (fd - de[i]).abs() / fd.abs().max(de[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "out {out} input {i}: {fd} vs {}", de[i]);
            }
        }
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn greedy_generation_is_repeatable() {
        let w = ModelWeights::init(&cfg(), 9).unwrap();
        let prompt = [BOS, 4, 12, 13, 5];
        let a = generate(&w, None, &prompt, 10, DecodeMode::Greedy).unwrap();
        let b = generate(&w, None, &prompt, 10, DecodeMode::Greedy).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pose.is_some(), a.tokens.contains(&POSE));
        let s1 = generate(&w, None, &prompt, 10, DecodeMode::Sampled { seed: 1, temperature: 1.0 }).unwrap();
        let s2 = generate(&w, None, &prompt, 10, DecodeMode::Sampled { seed: 1, temperature: 1.0 }).unwrap();
        assert_eq!(s1, s2);
    }
}
