use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mdsinfer::{
    generate_dataset, prepare, run_size_experiment, run_test, DesignKind, DesignSpec, GridSpec, ModelSpec,
    PipelineConfig, SimulationConfig,
};

fn single_test(c: &mut Criterion) {
    let design = DesignSpec::new(DesignKind::Identity, 200, 500).unwrap();
    let ds = generate_dataset(&design, &ModelSpec::standard(500, 10), 11).unwrap();
    let cfg = PipelineConfig::default();
    c.bench_function("run_test/n200_p500", |b| b.iter(|| run_test(black_box(&ds), 0, 0.0, 0.05, &cfg).unwrap()));

    let small = DesignSpec::new(DesignKind::Identity, 100, 120).unwrap();
    let ds = generate_dataset(&small, &ModelSpec::standard(120, 10), 11).unwrap();
    let prepared = prepare(&ds, 0, &cfg).unwrap();
    let grid = GridSpec::AroundPilot { half_width_scale: 10.0, steps: 21 };
    let mut group = c.benchmark_group("interval");
    group.sample_size(10);
    group.bench_function("grid21/n100_p120", |b| b.iter(|| prepared.confidence_interval(0.95, &grid).unwrap()));
    group.finish();
}

fn size_cell(c: &mut Criterion) {
    let design = DesignSpec::new(DesignKind::Identity, 100, 120).unwrap();
    let sim = SimulationConfig { seed: 1, ..Default::default() };
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("size/20reps", |b| {
        b.iter(|| run_size_experiment(&[design], &[10], 20, 0.05, &sim).unwrap())
    });
    group.finish();
}

criterion_group!(benches, single_test, size_cell);
criterion_main!(benches);
