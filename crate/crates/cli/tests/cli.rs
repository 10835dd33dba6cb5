use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use posetok_core::data::{read_records, write_records, DatasetKind, Generator};
use posetok_core::model::{Checkpoint, CheckpointMeta, Group, ModelConfig, ModelWeights, Trainable};
use posetok_core::train::loss::accumulate;
use posetok_core::train::{AdamW, Example, LossConfig, Normalizer, OptimConfig};
use posetok_core::{MetricReport, Vocab};

fn posetok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posetok")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn tiny_model(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq: 160,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    }
}

fn save_checkpoint(w: ModelWeights, path: &Path) {
    let meta = CheckpointMeta {
        stage: "base".into(),
        step: 0,
    };
    Checkpoint::new(w, Vocab::shipped(), meta).unwrap().save(path).unwrap();
}

#[test]
fn gen_data_reports_count_and_a_stable_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = posetok(&["gen-data", "--kind", "rpe", "--n", "25", "--seed", "3", "--out", &p(dir.path(), "a.jsonl")]);
    let b = posetok(&["gen-data", "--kind", "rpe", "--n", "25", "--seed", "3", "--out", &p(dir.path(), "b.jsonl")]);
    assert!(a.status.success());
    assert!(stdout(&a).starts_with("25 records "));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(read_records(dir.path().join("a.jsonl")).unwrap().len(), 25);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_kind = posetok(&["gen-data", "--kind", "dance", "--n", "2", "--seed", "1", "--out", &p(dir.path(), "x")]);
    assert_eq!(bad_kind.status.code(), Some(2));
    let zero = posetok(&["gen-data", "--kind", "vqa", "--n", "0", "--seed", "1", "--out", &p(dir.path(), "x")]);
    assert_eq!(zero.status.code(), Some(2));
    let unwritable = posetok(&["gen-data", "--kind", "vqa", "--n", "2", "--seed", "1", "--out", &p(dir.path(), "no/such/dir/x")]);
    assert_eq!(unwritable.status.code(), Some(3));
    assert!(unwritable.stdout.is_empty() && !unwritable.stderr.is_empty());

    let vqa = p(dir.path(), "vqa.jsonl");
    assert!(posetok(&["gen-data", "--kind", "vqa", "--n", "8", "--seed", "1", "--out", &vqa]).status.success());
    let no_base = posetok(&["train", "--stage", "finetune", "--data", &vqa, "--out-ckpt", &p(dir.path(), "f"), "--seed", "1"]);
    assert_eq!(no_base.status.code(), Some(2));
    let unknown_key = posetok(&[
        "train", "--stage", "base", "--data", &vqa, "--out-ckpt", &p(dir.path(), "b"), "--seed", "1", "--set", "warp=9",
    ]);
    assert_eq!(unknown_key.status.code(), Some(2));
    let missing = posetok(&["train", "--stage", "base", "--data", &p(dir.path(), "absent"), "--out-ckpt", &p(dir.path(), "b"), "--seed", "1"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn diverging_training_exits_with_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let vqa = p(dir.path(), "vqa.jsonl");
    assert!(posetok(&["gen-data", "--kind", "vqa", "--n", "8", "--seed", "1", "--out", &vqa]).status.success());
    let out = posetok(&[
        "train", "--stage", "base", "--data", &vqa, "--out-ckpt", &p(dir.path(), "b"), "--seed", "1",
        "--set", "learning_rate=1e300", "--set", "max_steps=5", "--set", "d_model=16", "--set", "n_heads=2",
        "--set", "d_ff=16", "--set", "n_layers=1",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-finite loss at step"), "{err}");
}

#[test]
fn eval_report_round_trips_and_random_weights_are_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocab::shipped();
    let ckpt = dir.path().join("random.ckpt");
    save_checkpoint(ModelWeights::init(&tiny_model(&vocab), 11).unwrap(), &ckpt);
    let data = p(dir.path(), "t2p.jsonl");
    assert!(posetok(&["gen-data", "--kind", "text2pose", "--n", "200", "--seed", "4", "--out", &data]).status.success());
    let report = dir.path().join("report.jsonl");
    let out = posetok(&[
        "eval", "--task", "pose-gen", "--ckpt", &ckpt.to_string_lossy(), "--data", &data,
        "--out", &report.to_string_lossy(), "--no-recall",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("MPJRE(x100)"));
    let text = std::fs::read_to_string(&report).unwrap();
    let parsed = MetricReport::from_json_line(text.trim()).unwrap();
    assert_eq!(parsed.to_json_line(), text.trim());
    assert_eq!(parsed.n_samples, 200);
    assert!(parsed.caption_consistency.unwrap() <= 0.1);
}

#[test]
fn unknown_words_are_a_vocab_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocab::shipped();
    let ckpt = dir.path().join("random.ckpt");
    save_checkpoint(ModelWeights::init(&tiny_model(&vocab), 1).unwrap(), &ckpt);
    let mut recs = Generator::default().generate(DatasetKind::Text2pose, 3, 1).unwrap();
    recs[2].question = format!("zeppelin {}", recs[2].question);
    let data = dir.path().join("odd.jsonl");
    write_records(&data, &recs).unwrap();
    let out = posetok(&[
        "eval", "--task", "pose-gen", "--ckpt", &ckpt.to_string_lossy(), "--data", &data.to_string_lossy(),
        "--out", &p(dir.path(), "r"), "--no-recall",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

fn chat(ckpt: &Path, extra: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_posetok"))
        .args(["chat", "--ckpt", &ckpt.to_string_lossy()])
        .args(extra)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

/// Overfits a tiny model on one record so chat has something to say.
fn overfit_checkpoint(dir: &Path) -> (PathBuf, posetok_core::ChatRecord) {
    let vocab = Vocab::shipped();
    let record = Generator::default().generate(DatasetKind::Text2pose, 1, 21).unwrap().remove(0);
    let ex = Example::encode(&vocab, &record).unwrap();
    let mut w = ModelWeights::init(&tiny_model(&vocab), 2).unwrap();
    let trainable = Trainable::only(&[Group::Embedding, Group::Transformer, Group::LmHead, Group::PoseHead]);
    let mask = w.layout.mask(&trainable);
    let cfg = OptimConfig {
        learning_rate: 3e-3,
        ..OptimConfig::default()
    };
    let mut opt = AdamW::new(w.params.len());
    let mut grads = vec![0.0; w.params.len()];
    for _ in 0..150 {
        grads.fill(0.0);
        let batch = [&ex];
        accumulate(&w, &batch, &LossConfig::default(), Normalizer::of(&batch), Some(&mut grads), &trainable).unwrap();
        opt.step(&mut w.params, &grads, &mask, &cfg).unwrap();
    }
    let path = dir.join("overfit.ckpt");
    save_checkpoint(w, &path);
    (path, record)
}

#[test]
fn chat_answers_and_dumps_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, record) = overfit_checkpoint(dir.path());
    let poses = dir.path().join("poses.txt");
    let out = chat(&ckpt, &["--pose-out", &poses.to_string_lossy()], &format!("{}\n:quit\n", record.question));
    assert!(out.status.success());
    let text = stdout(&out);
    let vocab = Vocab::shipped();
    let expected = vocab.decode(&vocab.encode(&record.answer));
    assert!(text.starts_with(&expected), "{text}");
    assert!(text.contains("pose (24 joints x 6D):"));
    assert_eq!(text.lines().filter(|l| l.starts_with("  ")).count(), 24);
    assert!(posetok_core::data::read_poses(&poses).is_ok());
}

#[test]
fn chat_quits_cleanly_and_survives_a_bad_observation() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocab::shipped();
    let ckpt = dir.path().join("random.ckpt");
    save_checkpoint(ModelWeights::init(&tiny_model(&vocab), 3).unwrap(), &ckpt);
    let quit = chat(&ckpt, &[], ":quit\n");
    assert_eq!(quit.status.code(), Some(0));
    assert!(quit.stdout.is_empty());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = chat(&ckpt, &["--max-new", "4"], &format!(":obs {}\nwhat color is snow?\n:quit\n", bad.display()));
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("observation not loaded"));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1, "one reply expected: {text}");
    assert!(!text.contains("pose (24 joints"));
}
