use std::hint::black_box;

use clipdesk_bench::{gaussian, random_index, small_corpus, unit_vector};
use clipdesk_core::autodiff::Tape;
use clipdesk_core::trainer::Trainer;
use clipdesk_core::TrainConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Forward and backward through one tape matmul.
fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    for n in [32, 64, 128] {
        let a = gaussian(n, n, 1);
        let b = gaussian(n, n, 2);
        group.throughput(Throughput::Elements((n * n * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.param(black_box(&a).clone());
                let y = tape.param(black_box(&b).clone());
                let p = tape.matmul(x, y).unwrap();
                let s = tape.sum(p).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let (corpus, set) = small_corpus(64);
    let trainer = Trainer::new(
        TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        },
        &set,
    )
    .unwrap();
    let model = trainer.model;
    let pixels: Vec<_> = corpus.rasters.iter().take(64).map(|r| r.to_pixels()).collect();
    let refs: Vec<_> = pixels.iter().collect();
    let captions: Vec<&[usize]> = set.captions.iter().take(64).map(Vec::as_slice).collect();

    let mut group = c.benchmark_group("encode");
    group.throughput(Throughput::Elements(64));
    group.bench_function("images_64", |b| {
        b.iter(|| model.encode_image_batch(black_box(&refs)).unwrap())
    });
    group.bench_function("captions_64", |b| {
        b.iter(|| model.encode_text_id_batch(black_box(&captions)).unwrap())
    });
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let (_, set) = small_corpus(512);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for n in [8, 64] {
        let mut trainer = Trainer::new(
            TrainConfig {
                batch_size: n,
                ..TrainConfig::default()
            },
            &set,
        )
        .unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| trainer.step(&set).unwrap())
        });
    }
    group.finish();
}

fn index_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("index_search");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1_000, 10_000] {
        let index = random_index(n, 32, 9);
        let query = unit_vector(32, &mut rng);
        group.throughput(Throughput::Elements(n as u64));
        for k in [10, 100] {
            group.bench_with_input(BenchmarkId::new(format!("k{k}"), n), &k, |b, &k| {
                b.iter(|| index.search(black_box(&query), k).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, matmul, encode, train_step, index_search);
criterion_main!(benches);
