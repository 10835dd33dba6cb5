use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use posetok_core::body::{forward_kinematics, KinematicTree};
use posetok_core::data::{sample_pose, DatasetKind, Generator, PosePrior};
use posetok_core::model::{forward, ModelConfig, ModelWeights, Trainable};
use posetok_core::rotmath::{axis_angle_to_matrix, matrix_to_axis_angle, rot6d_to_matrix, AxisAngle, Rot6D};
use posetok_core::train::{loss_and_grad, Example, LossConfig};
use posetok_core::Vocab;

fn rotations(c: &mut Criterion) {
    let r6 = Rot6D::from_slice(&[0.9, 0.1, -0.2, 0.3, 1.1, 0.4]);
    c.bench_function("rot6d_to_matrix", |b| b.iter(|| rot6d_to_matrix(black_box(&r6)).unwrap()));
    let aa = AxisAngle::new(0.3, -0.7, 1.1);
    c.bench_function("axis_angle_round_trip", |b| {
        b.iter(|| matrix_to_axis_angle(&axis_angle_to_matrix(black_box(&aa))))
    });
    let pose = sample_pose(1, &PosePrior::default_prior());
    let tree = KinematicTree::default_skeleton();
    c.bench_function("forward_kinematics", |b| b.iter(|| forward_kinematics(black_box(&pose), &tree)));
}

fn model(c: &mut Criterion) {
    let vocab = Vocab::shipped();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let w = ModelWeights::init(&cfg, 1).unwrap();
    let mut group = c.benchmark_group("forward");
    for len in [16usize, 64, 128] {
        let tokens: Vec<u32> = (0..len).map(|i| 8 + (i as u32 % 50)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(len), &tokens, |b, t| {
            b.iter(|| forward(&w, None, black_box(t)).unwrap())
        });
    }
    group.finish();

    let records = Generator::default().generate(DatasetKind::Obs2pose, 8, 3).unwrap();
    let examples: Vec<Example> = records.iter().map(|r| Example::encode(&vocab, r).unwrap()).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let w = w.with_adapters(2).unwrap();
    let trainable = Trainable::only(&[
        posetok_core::model::Group::Adapter,
        posetok_core::model::Group::PoseHead,
    ]);
    c.bench_function("loss_and_grad_obs2pose_x8", |b| {
        b.iter(|| loss_and_grad(&w, &refs, &LossConfig::default(), &trainable).unwrap())
    });
}

criterion_group!(benches, rotations, model);
criterion_main!(benches);
