use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use sparkle_bench::{football, football_provider};
use sparkle_core::{RunOptions, Simulation};

fn ticks(c: &mut Criterion) {
    let provider = Arc::new(football_provider());
    c.bench_function("football/first_tick", |b| {
        b.iter_batched(
            || Simulation::new(football(), RunOptions::default(), provider.clone()).unwrap(),
            |mut sim| sim.step().unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
    c.bench_function("football/full_run", |b| {
        b.iter(|| {
            let mut sim = Simulation::new(football(), RunOptions::default(), provider.clone()).unwrap();
            sim.run_to_end().unwrap().current_tick
        })
    });
}

criterion_group!(benches, ticks);
criterion_main!(benches);
