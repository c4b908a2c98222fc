//! Sequential vs data-parallel execution of one training batch and of
//! validation-set decoding on the mini fixture corpus.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pclc_core::data::{load_corpus_dir, split_leave_one_out, Utterance};
use pclc_core::exec::Execution;
use pclc_core::model::PclcModel;
use pclc_core::rng::seeded;
use pclc_core::testkit::{fixture_config, fixture_dir};
use pclc_core::trainer::{batch_gradients, TrainConfig};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench(c: &mut Criterion) {
    let corpus = load_corpus_dir(&fixture_dir().join("mini")).unwrap();
    let split = split_leave_one_out(&corpus, "GetWeather", 1).unwrap();
    let emb = fixture_dir().join("embeddings16.txt");
    let model = PclcModel::from_corpus(fixture_config(), &corpus, "GetWeather", Some(&emb), true, &mut seeded(1)).unwrap();
    let batch: Vec<&Utterance> = split.train.iter().take(64).map(|&i| &corpus.utterances[i]).collect();
    let seeds: Vec<u64> = (0..batch.len() as u64).collect();
    let validation: Vec<&Utterance> = split.validation.iter().map(|&i| &corpus.utterances[i]).collect();
    let cfg = TrainConfig::default();

    let mut group = c.benchmark_group("batch_gradients");
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut m = model.clone();
            b.iter(|| {
                m.store.zero_grads();
                black_box(batch_gradients(&mut m, &batch, &seeds, &cfg, exec).unwrap())
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("predict_validation");
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.predict_many(&validation, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
