use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use protegi::llm::synthetic_dataset;
use protegi::selection::{select, sr_schedule, BernoulliArms};
use protegi::{Algorithm, CandidateId, SelectionConfig};

fn schedule(c: &mut Criterion) {
    c.bench_function("sr_schedule n=20 B=10000", |b| b.iter(|| sr_schedule(black_box(20), black_box(10_000))));
}

fn selectors(c: &mut Criterion) {
    let pool = synthetic_dataset(1000, 0).examples;
    let ids: Vec<CandidateId> = (0..16).map(|i| CandidateId::of(&format!("bench {i}"))).collect();
    let arms = BernoulliArms {
        accuracy: (0..16).map(|i| 0.3 + 0.04 * i as f64).collect(),
        salt: 1,
    };
    let mut group = c.benchmark_group("select 16 arms keep 4");
    for algorithm in Algorithm::ALL {
        let cfg = SelectionConfig {
            algorithm,
            ..SelectionConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(algorithm.name()), &cfg, |b, cfg| {
            b.iter(|| select(cfg, 4, &ids, &pool, &arms, black_box(7)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, schedule, selectors);
criterion_main!(benches);
