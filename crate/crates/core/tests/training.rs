use posetok_core::data::{DatasetKind, Generator};
use posetok_core::model::{forward, generate, Checkpoint, DecodeMode, Group, ModelConfig, ModelWeights, Trainable};
use posetok_core::train::loss::accumulate;
use posetok_core::train::{
    loss, train_loop, AdamW, Example, LossConfig, Normalizer, OptimConfig, Stage, TrainConfig, TrainOutputs,
};
use posetok_core::{ChatRecord, Vocab};

fn small_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq: 128,
        lora_rank: 4,
        lora_alpha: 8.0,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    }
}

fn encode(vocab: &Vocab, records: &[ChatRecord]) -> Vec<Example> {
    records.iter().map(|r| Example::encode(vocab, r).unwrap()).collect()
}

fn fit(w: &mut ModelWeights, examples: &[Example], steps: usize, lr: f64, batch: usize) -> Vec<f64> {
    let trainable = Trainable::only(&[Group::Embedding, Group::Transformer, Group::LmHead, Group::PoseHead]);
    let mask = w.layout.mask(&trainable);
    let cfg = OptimConfig {
        learning_rate: lr,
        ..OptimConfig::default()
    };
    let loss_cfg = LossConfig::default();
    let mut opt = AdamW::new(w.params.len());
    let mut grads = vec![0.0; w.params.len()];
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let b: Vec<&Example> = (0..batch).map(|i| &examples[(step * batch + i) % examples.len()]).collect();
        grads.fill(0.0);
        let c = accumulate(w, &b, &loss_cfg, Normalizer::of(&b), Some(&mut grads), &trainable).unwrap();
        history.push(c.total);
        opt.step(&mut w.params, &grads, &mask, &cfg).unwrap();
    }
    history
}

#[test]
fn overfits_thirty_two_records() {
    let vocab = Vocab::shipped();
    let g = Generator::default();
    let mut records = g.generate(DatasetKind::Text2pose, 16, 1).unwrap();
    records.extend(g.generate(DatasetKind::Vqa, 16, 2).unwrap());
    let examples = encode(&vocab, &records);
    let all: Vec<&Example> = examples.iter().collect();
    let mut w = ModelWeights::init(&small_config(&vocab), 4).unwrap();
    let before = loss(&w, &all, &LossConfig::default()).unwrap().total;
    fit(&mut w, &examples, 600, 3e-3, 16);
    let after = loss(&w, &all, &LossConfig::default()).unwrap().total;
    assert!(after <= 0.1 * before, "loss {before} -> {after}");
}

#[test]
fn single_record_overfit_is_monotone_and_reproduced() {
    let vocab = Vocab::shipped();
    let record = Generator::default().generate(DatasetKind::Text2pose, 1, 8).unwrap();
    let examples = encode(&vocab, &record);
    let mut w = ModelWeights::init(&small_config(&vocab), 5).unwrap();
    let history = fit(&mut w, &examples, 600, 1e-3, 1);
    for window in history[200..].chunks(100) {
        let (first, last) = (window[0], window[window.len() - 1]);
        assert!(last <= first * 1.05, "window rose {first} -> {last}");
    }
    let prompt = vocab.prompt_ids(&record[0].question);
    let out = generate(&w, None, &prompt, 16, DecodeMode::Greedy).unwrap();
    let (ids, start) = vocab.dialogue_ids(&record[0].question, &record[0].answer);
    assert_eq!(out.tokens, ids[start..]);
    assert!(out.pose.is_some());
}

#[test]
fn accumulation_matches_one_large_batch() {
    let vocab = Vocab::shipped();
    let g = Generator::default();
    let mut records = g.generate(DatasetKind::Obs2pose, 6, 1).unwrap();
    records.extend(g.generate(DatasetKind::Text2pose, 5, 2).unwrap());
    records.extend(g.generate(DatasetKind::Vqa, 5, 3).unwrap());
    let examples = encode(&vocab, &records);
    let refs: Vec<&Example> = examples.iter().collect();
    let base = ModelWeights::init(&small_config(&vocab), 6).unwrap().with_adapters(7).unwrap();
    let trainable = Stage::Finetune.trainable();
    let mask = base.layout.mask(&trainable);
    let norm = Normalizer::of(&refs);
    let cfg = LossConfig::default();

    let mut one = vec![0.0; base.params.len()];
    accumulate(&base, &refs, &cfg, norm, Some(&mut one), &trainable).unwrap();
    let mut two = vec![0.0; base.params.len()];
    for half in refs.chunks(8) {
        accumulate(&base, half, &cfg, norm, Some(&mut two), &trainable).unwrap();
    }

    let step = |grads: &[f64]| {
        let mut w = base.clone();
        AdamW::new(w.params.len())
            .step(&mut w.params, grads, &mask, &OptimConfig::default())
            .unwrap();
        w.params
    };
    let (a, b) = (step(&one), step(&two));
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8, "first updates differ by {worst}");
}

fn tiny_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("d_model", "32"),
        ("n_layers", "1"),
        ("n_heads", "2"),
        ("d_ff", "64"),
        ("lora_rank", "4"),
        ("lora_alpha", "8"),
        ("max_steps", "6"),
        ("batch_size", "8"),
        ("learning_rate", "1e-3"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn two_stage(seed: u64) -> (Checkpoint, Checkpoint) {
    let vocab = Vocab::shipped();
    let g = Generator::default();
    let mut cfg = tiny_train_config();
    cfg.optim.rng_seed = seed;
    let vqa = g.generate(DatasetKind::Vqa, 24, 1).unwrap();
    let base = train_loop(Stage::Base, &vqa, &cfg, None, &vocab, &TrainOutputs::default()).unwrap();
    let mut mix = g.generate(DatasetKind::Obs2pose, 8, 2).unwrap();
    mix.extend(g.generate(DatasetKind::Rpe, 4, 3).unwrap());
    mix.extend(g.generate(DatasetKind::Text2pose, 8, 4).unwrap());
    mix.extend(vqa);
    let ft = train_loop(Stage::Finetune, &mix, &cfg, Some(&base.checkpoint), &vocab, &TrainOutputs::default()).unwrap();
    (base.checkpoint, ft.checkpoint)
}

#[test]
fn two_stage_training_is_deterministic() {
    let (b1, f1) = two_stage(3);
    let (b2, f2) = two_stage(3);
    assert_eq!(b1.to_text(), b2.to_text());
    assert_eq!(f1.to_text(), f2.to_text());
    let (_, f3) = two_stage(4);
    assert_ne!(f1.to_text(), f3.to_text());
}

#[test]
fn finetuning_leaves_frozen_weights_bit_identical() {
    let (base, ft) = two_stage(5);
    let w = &ft.weights;
    let frozen = w.layout.mask(&Stage::Finetune.trainable());
    let n = base.weights.params.len();
    for (i, (a, b)) in base.weights.params.iter().zip(&w.params[..n]).enumerate() {
        if !frozen[i] {
            assert_eq!(a.to_bits(), b.to_bits(), "parameter {i} moved");
        }
    }
    assert_ne!(base.weights.params[..n], w.params[..n], "pose head should have trained");
}

#[test]
fn merged_adapters_match_after_training() {
    let (_, ft) = two_stage(6);
    let vocab = &ft.vocab;
    let merged = ft.weights.merge_adapters().unwrap();
    let records = Generator::default().generate(DatasetKind::Obs2pose, 5, 9).unwrap();
    for r in &records {
        let (ids, _) = vocab.dialogue_ids(&r.question, &r.answer);
        let a = forward(&ft.weights, r.observation.as_ref(), &ids).unwrap();
        let b = forward(&merged, r.observation.as_ref(), &ids).unwrap();
        let worst = a.logits.iter().zip(&b.logits).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}

#[test]
fn base_stage_rejects_pose_records() {
    let vocab = Vocab::shipped();
    let recs = Generator::default().generate(DatasetKind::Text2pose, 4, 1).unwrap();
    let err = train_loop(Stage::Base, &recs, &tiny_train_config(), None, &vocab, &TrainOutputs::default());
    assert!(matches!(err, Err(posetok_core::Error::Config(_))));
}

#[test]
fn finetune_requires_a_base() {
    let vocab = Vocab::shipped();
    let recs = Generator::default().generate(DatasetKind::Vqa, 4, 1).unwrap();
    let err = train_loop(Stage::Finetune, &recs, &tiny_train_config(), None, &vocab, &TrainOutputs::default());
    assert!(matches!(err, Err(posetok_core::Error::Config(_))));
}
