use std::hint::black_box;

use codi_core::data::{encode, generate_toy, EncodedBatch, TableSchema};
use codi_core::engine::{CoDiModel, TrainConfig};
use codi_core::eval::{coverage_points, embed, CoverageDirection};
use codi_core::rng::{stream_rng, Stream};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn toy(n: usize) -> (TableSchema, EncodedBatch, codi_core::data::Table) {
    let (schema, table) = generate_toy(n, &mut stream_rng(0, Stream::Toy, 0)).unwrap();
    let batch = encode(&table, &schema).unwrap();
    (schema, batch, table)
}

fn forward(c: &mut Criterion) {
    let (schema, batch, _) = toy(500);
    let model = CoDiModel::new(schema, TrainConfig::default()).unwrap();
    let net = model.net_c().unwrap();
    let mut g = c.benchmark_group("forward");
    g.throughput(Throughput::Elements(500));
    g.bench_function("net_c_500_rows", |b| {
        b.iter(|| {
            net.forward_values(black_box(&batch.cont), batch.disc.probs(), &[25])
                .unwrap()
        })
    });
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let (schema, batch, _) = toy(500);
    let model = CoDiModel::new(schema, TrainConfig::default()).unwrap();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    g.throughput(Throughput::Elements(500));
    g.bench_function("batch_500", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| {
                let step = m.step();
                m.train_step(
                    &batch,
                    &mut stream_rng(0, Stream::Train, step),
                    &mut stream_rng(0, Stream::Negative, step),
                )
                .unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn sample(c: &mut Criterion) {
    let (schema, _, _) = toy(500);
    let model = CoDiModel::new(schema, TrainConfig::default()).unwrap();
    let mut g = c.benchmark_group("sample");
    g.sample_size(10);
    g.throughput(Throughput::Elements(1000));
    g.bench_function("rows_1000", |b| {
        b.iter(|| model.sample(1000, black_box(1)).unwrap())
    });
    g.finish();
}

fn coverage(c: &mut Criterion) {
    let (schema, _, real) = toy(2000);
    let (_, fake) = generate_toy(2000, &mut stream_rng(1, Stream::Toy, 0)).unwrap();
    let (r, f) = (
        embed(&real, &schema).unwrap(),
        embed(&fake, &schema).unwrap(),
    );
    let mut g = c.benchmark_group("coverage");
    g.sample_size(10);
    g.bench_function("2000x2000_k5", |b| {
        b.iter(|| {
            coverage_points(black_box(&r), &f, 5, CoverageDirection::RealNeighborhoods).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, forward, train_step, sample, coverage);
criterion_main!(benches);
