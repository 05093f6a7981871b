use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use vacts_core::presets;
use vacts_core::wrench::{capacity_margin, manipulability, sweep, Metric, SweepAxis, SweepSpec, Variant};

fn bench(c: &mut Criterion) {
    let sys = presets::table1().unwrap();
    let task = sys.nominal().unwrap().task_state();
    for variant in [Variant::Acts, Variant::Vacts] {
        c.bench_function(&format!("capacity_margin/{variant:?}"), |b| {
            b.iter(|| capacity_margin(black_box(&sys), black_box(&task), variant, &Default::default()).unwrap())
        });
    }
    c.bench_function("manipulability/vacts", |b| {
        b.iter(|| manipulability(&sys, black_box(&task), Variant::Vacts).unwrap())
    });
    let spec = SweepSpec {
        axis: SweepAxis::Inclination,
        values: (0..71).map(|k| 10.0 + k as f64).collect(),
        metric: Metric::CapacityMargin,
        variants: vec![Variant::Acts, Variant::Vacts],
        capacity: Default::default(),
    };
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("inclination_71x2", |b| {
        b.iter(|| sweep(&sys, &task, black_box(&spec)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
