//! Loss, gradients, optimizer and the training loop.

pub mod config;
pub mod loss;
pub mod optim;
pub mod run;

pub use config::TrainConfig;
pub use loss::{loss, loss_and_grad, Example, LossComponents, LossConfig, Normalizer, PoseSpace};
pub use optim::{AdamW, OptimConfig};
pub use run::{default_log_path, train_loop, Stage, StepLog, TrainOutcome, TrainOutputs};

#[cfg(test)]
mod tests {
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{DatasetKind, Generator};
    use crate::model::params::{Group, ModelWeights, Trainable};
    use crate::model::ModelConfig;
    use crate::tok::Vocab;

    fn small(vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_seq: 128,
            lora_rank: 4,
            ..ModelConfig::with_vocab(vocab.len())
        }
    }

    fn mixed_examples(vocab: &Vocab) -> Vec<Example> {
        let g = Generator::default();
        let mut out = Vec::new();
        for (kind, seed) in [
            (DatasetKind::Obs2pose, 1),
            (DatasetKind::Text2pose, 2),
            (DatasetKind::Vqa, 3),
            (DatasetKind::Rpe, 4),
        ] {
            for r in g.generate(kind, 1, seed).unwrap() {
                out.push(Example::encode(vocab, &r).unwrap());
            }
        }
        out
    }

    fn perturbed_adapters(vocab: &Vocab) -> ModelWeights {
        let mut w = ModelWeights::init(&small(vocab), 1).unwrap().with_adapters(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bs: Vec<usize> = w.layout.adapted_linears().iter().map(|l| l.adapter.unwrap().b).collect();
        for s in bs {
            for p in w.tensor_mut(s) {
                *p = rng.random_range(-0.1..0.1);
            }
        }
        w
    }

    #[test]
    fn recombination_is_exact() {
        let c = LossConfig::default();
        assert_eq!(c.combine(2.0, 0.5), 2.05);
        let vocab = Vocab::shipped();
        let w = ModelWeights::init(&small(&vocab), 1).unwrap();
        let ex = mixed_examples(&vocab);
        let refs: Vec<&Example> = ex.iter().collect();
        let l = loss(&w, &refs, &c).unwrap();
        assert!((l.total - (l.ce + 0.1 * l.pose_l1)).abs() <= 1e-12);
        assert!(l.pose_l1 > 0.0 && l.ce > 0.0);
    }

    #[test]
    fn instruction_only_batch_has_no_pose_term() {
        let vocab = Vocab::shipped();
        let w = ModelWeights::init(&small(&vocab), 1).unwrap();
        let recs = Generator::default().generate(DatasetKind::Vqa, 4, 1).unwrap();
        let ex: Vec<Example> = recs.iter().map(|r| Example::encode(&vocab, r).unwrap()).collect();
        let refs: Vec<&Example> = ex.iter().collect();
        assert_eq!(loss(&w, &refs, &LossConfig::default()).unwrap().pose_l1, 0.0);
    }

    #[test]
    fn exact_pose_has_zero_pose_term() {
        let vocab = Vocab::shipped();
        let mut w = ModelWeights::init(&small(&vocab), 1).unwrap();
        let recs = Generator::default().generate(DatasetKind::Text2pose, 1, 5).unwrap();
        let ex = Example::encode(&vocab, &recs[0]).unwrap();
        let l = w.layout.clone();
        w.tensor_mut(l.pose2.w).fill(0.0);
        w.tensor_mut(l.pose2.b.unwrap()).copy_from_slice(ex.target_6d.as_ref().unwrap());
        let c = loss(&w, &[&ex], &LossConfig::default()).unwrap();
        assert!(c.pose_l1 < 1e-15, "{}", c.pose_l1);
    }

    fn check_gradients(space: PoseSpace) {
        let vocab = Vocab::shipped();
        let mut w = perturbed_adapters(&vocab);
        let ex = mixed_examples(&vocab);
        let refs: Vec<&Example> = ex.iter().collect();
        let cfg = LossConfig {
            pose_space: space,
            ..LossConfig::default()
        };
        let trainable = Trainable::only(&Group::ALL);
        let (_, grads) = loss_and_grad(&w, &refs, &cfg, &trainable).unwrap();
        // Below ~1e-5 the central difference is dominated by round-off in the loss.
        let candidates: Vec<usize> = (0..grads.len()).filter(|&i| grads[i].abs() > 1e-5).collect();
        assert!(candidates.len() >= 60);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let picked: Vec<usize> = candidates.choose_multiple(&mut rng, 60).copied().collect();
        let h = 1e-5;
        for &i in &picked {
            let orig = w.params[i];
            w.params[i] = orig + h;
            let up = loss(&w, &refs, &cfg).unwrap().total;
            w.params[i] = orig - h;
            let down = loss(&w, &refs, &cfg).unwrap().total;
            w.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs());
            let name = &w.layout.slots.iter().find(|s| s.range().contains(&i)).unwrap().name;
            assert!(rel < 1e-4, "{name}[{i}]: analytic {} vs numeric {fd}", grads[i]);
        }
    }

    #[test]
    fn gradients_match_differences_matrix_space() {
        check_gradients(PoseSpace::Matrix);
    }

    #[test]
    fn gradients_match_differences_6d_space() {
        check_gradients(PoseSpace::SixD);
    }

    #[test]
    fn frozen_groups_get_zero_gradient() {
        let vocab = Vocab::shipped();
        let w = perturbed_adapters(&vocab);
        let ex = mixed_examples(&vocab);
        let refs: Vec<&Example> = ex.iter().collect();
        let t = Stage::Finetune.trainable();
        let (_, grads) = loss_and_grad(&w, &refs, &LossConfig::default(), &t).unwrap();
        let mut adapter_signal = false;
        for s in &w.layout.slots {
            let g = &grads[s.range()];
            if t.contains(s.group) {
                adapter_signal |= s.group == Group::Adapter && g.iter().any(|&v| v != 0.0);
            } else {
                assert!(g.iter().all(|&v| v == 0.0), "{} has gradient", s.name);
            }
        }
        assert!(adapter_signal);
    }

    #[test]
    fn no_pose_weight_no_head_gradient() {
        let vocab = Vocab::shipped();
        let w = perturbed_adapters(&vocab);
        let ex = mixed_examples(&vocab);
        let refs: Vec<&Example> = ex.iter().collect();
        let cfg = LossConfig {
            lambda_pose: 0.0,
            ..LossConfig::default()
        };
        let (_, grads) = loss_and_grad(&w, &refs, &cfg, &Trainable::only(&Group::ALL)).unwrap();
        for s in w.layout.slots.iter().filter(|s| s.group == Group::PoseHead) {
            assert!(grads[s.range()].iter().all(|&v| v == 0.0), "{}", s.name);
        }
    }

    #[test]
    fn pose_gradient_can_stop_at_the_head() {
        let vocab = Vocab::shipped();
        let mut cfg = small(&vocab);
        cfg.pose_grad_to_lm = false;
        let w = ModelWeights::init(&cfg, 1).unwrap();
        let ex = mixed_examples(&vocab);
        let refs: Vec<&Example> = ex.iter().collect();
        let only_pose = LossConfig {
            lambda_text: 0.0,
            ..LossConfig::default()
        };
        let (_, grads) = loss_and_grad(&w, &refs, &only_pose, &Trainable::only(&Group::ALL)).unwrap();
        for s in &w.layout.slots {
            let nonzero = grads[s.range()].iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, s.group == Group::PoseHead, "{}", s.name);
        }
    }
}
