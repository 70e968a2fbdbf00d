use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fi2p_bench::{model_fixture, scaled_config};
use fi2p_core::model::forward;
use fi2p_core::Variant;

/// Single-image forward pass of both variants across config scales.
fn forward_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(20);
    for scale in [8, 4, 2] {
        for variant in Variant::ALL {
            let config = scaled_config(variant, scale);
            let (params, image) = model_fixture(&config, 11);
            g.bench_with_input(BenchmarkId::new(variant.as_str(), scale), &scale, |b, _| {
                b.iter(|| black_box(forward(&params, &config, &image).unwrap().cloud))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, forward_pass);
criterion_main!(benches);
