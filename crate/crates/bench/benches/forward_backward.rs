use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use granola_bench::gin_fixture;
use granola_core::mpnn::NormChoice;
use granola_core::train::time_forward_backward;
use granola_core::{GranolaVariant, NormVariant};

fn stacks(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(20);
    let norms = [
        ("identity", NormChoice::zoo(NormVariant::Identity)),
        ("batchnorm", NormChoice::zoo(NormVariant::Batchnorm)),
        ("granola", NormChoice::granola(GranolaVariant::Full)),
    ];
    for n in [500, 1000, 2000] {
        for (name, norm) in &norms {
            let f = gin_fixture(norm.clone(), n, 16).unwrap();
            let mut step = 0;
            group.bench_with_input(BenchmarkId::new(*name, n), &f, |b, f| {
                b.iter(|| {
                    step += 1;
                    time_forward_backward(&f.stack, &f.store, &f.batch, step).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn norm_layers(c: &mut Criterion) {
    let mut group = c.benchmark_group("norm_layer");
    group.sample_size(20);
    for v in NormVariant::ALL {
        let f = gin_fixture(NormChoice::zoo(v), 1000, 16).unwrap();
        group.bench_function(format!("{v:?}"), |b| {
            b.iter(|| time_forward_backward(&f.stack, &f.store, &f.batch, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stacks, norm_layers);
criterion_main!(benches);
