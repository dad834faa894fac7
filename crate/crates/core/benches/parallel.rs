//! Sequential against parallel execution for the data-parallel stages.
//!
//!     cargo bench -p gazetteer-core --bench parallel

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gazetteer::classifier::{evaluate_with, Hyperparams, LogisticModel};
use gazetteer::corpus::segment_pages_with;
use gazetteer::embedding::EmbeddingProvider;
use gazetteer::geo::{distance_histogram_with, SWEDEN_CENTER};
use gazetteer::{EmbeddingVector, Execution, GeoPoint, HashingEmbedder, RawPage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn definitions(n: usize) -> Vec<String> {
    let words = ["stad", "i", "Uppland", "vid", "Fyrisån", "residensstad", "län", "hufvudstad", "socken", "inv.", "kvkm."];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let body: Vec<&str> = (0..rng.gen_range(8..30)).map(|_| words[rng.gen_range(0..words.len())]).collect();
            format!("Ort{i}, {}.", body.join(" "))
        })
        .collect()
}

fn embed_batch(c: &mut Criterion) {
    let embedder = HashingEmbedder::default();
    let texts = definitions(4000);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut group = c.benchmark_group("embed_batch");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| embedder.embed_batch(&refs, exec).unwrap())
        });
    }
    group.finish();
}

fn histogram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<GeoPoint> =
        (0..200_000).map(|_| GeoPoint::new(rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0)).unwrap()).collect();
    let mut group = c.benchmark_group("distance_histogram");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| distance_histogram_with(&points, SWEDEN_CENTER, 500.0, exec).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let embedder = HashingEmbedder::default();
    let texts = definitions(5000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<(EmbeddingVector, bool)> =
        texts.iter().map(|t| (embedder.embed(t).unwrap(), rng.gen_bool(0.3))).collect();
    let model = LogisticModel {
        dim: embedder.dim(),
        weights: (0..embedder.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: 0.0,
        threshold: 0.5,
        hyperparams: Hyperparams::default(),
        trained_on: 0,
    };
    let mut group = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_with(&model, &data, exec).unwrap())
        });
    }
    group.finish();
}

fn segmentation(c: &mut Criterion) {
    let texts = definitions(20_000);
    let pages: Vec<RawPage> = texts
        .chunks(25)
        .enumerate()
        .map(|(i, chunk)| RawPage::new((i / 40) as u32 + 1, (i % 40) as u32 + 1, chunk.join("\n")))
        .collect();
    let mut group = c.benchmark_group("segment_pages");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| segment_pages_with(&pages, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, embed_batch, histogram, evaluation, segmentation);
criterion_main!(benches);
