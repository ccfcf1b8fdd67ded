//! Hot-path benchmarks: the audio front end, model forward/backward passes,
//! and the exact ordering solvers.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use puzseq_core::audio::{log_mel, stft_magnitude};
use puzseq_core::models::{similarity, ModelKind, SimilarityKernel, TRUNK_OUT};
use puzseq_core::solver::{solve_bruteforce, solve_heldkarp, ScoreMatrix};
use puzseq_core::synth::{gen_wav_song, SynthParams};
use puzseq_core::{Model, Tensor, TrainConfig};

fn fragment(frames: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * 128).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(&[frames, 128], data).unwrap()
}

fn front_end(c: &mut Criterion) {
    let params = SynthParams::default(); // one 24 s song
    let clip = gen_wav_song(&params, 0).unwrap();
    c.bench_function("stft_log_mel_24s", |b| {
        b.iter(|| log_mel(&stft_magnitude(black_box(&clip)).unwrap()).unwrap())
    });
}

fn model_passes(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let sen = Model::init(ModelKind::Sen, &cfg).unwrap();
    let sn = Model::init(ModelKind::Sn, &cfg).unwrap();
    let (xa, xb) = (fragment(120, 1), fragment(120, 2));

    let mut group = c.benchmark_group("forward_120_frames");
    group.sample_size(20);
    group.bench_function("sen_prob", |b| {
        b.iter(|| sen.prob(black_box(&xa), black_box(&xb)).unwrap())
    });
    group.bench_function("sn_prob", |b| {
        b.iter(|| sn.prob(black_box(&xa), black_box(&xb)).unwrap())
    });
    group.finish();

    if let Model::Sen(m) = &sen {
        let mut group = c.benchmark_group("backward_120_frames");
        group.sample_size(10);
        group.bench_function("sen_loss_and_grads", |b| {
            b.iter(|| m.loss_and_grads(black_box(&xa), black_box(&xb), 1).unwrap())
        });
        group.finish();
    }
}

fn similarity_matrix(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut feat = || {
        let data = (0..111 * TRUNK_OUT).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor::from_vec(&[111, TRUNK_OUT], data).unwrap()
    };
    let (fa, fb) = (feat(), feat());
    c.bench_function("similarity_cosine_111x111", |b| {
        b.iter(|| similarity(black_box(&fa), black_box(&fb), SimilarityKernel::Cosine).unwrap())
    });
}

fn solvers(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut matrix = |n: usize| {
        let scores = (0..n * n)
            .map(|i| if i % (n + 1) == 0 { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        ScoreMatrix::from_rows(scores, n).unwrap()
    };
    let m8 = matrix(8);
    let m11 = matrix(11);
    c.bench_function("bruteforce_n8", |b| {
        b.iter(|| solve_bruteforce(black_box(&m8)).unwrap())
    });
    c.bench_function("heldkarp_n11", |b| {
        b.iter(|| solve_heldkarp(black_box(&m11)).unwrap())
    });
}

criterion_group!(benches, front_end, model_passes, similarity_matrix, solvers);
criterion_main!(benches);
