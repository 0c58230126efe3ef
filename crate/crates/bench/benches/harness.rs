use criterion::{criterion_group, criterion_main, Criterion};
use smi_core::baselines::BaselineMethod;
use smi_core::harness::{
    evaluate_methods, generate_synthetic, EvalConfig, Method, SetCounts, SyntheticSpec,
};

fn evaluate(c: &mut Criterion) {
    let spec = SyntheticSpec {
        n_sets: SetCounts {
            member: 20,
            non_member: 20,
            aux: 20,
        },
        ..SyntheticSpec::default()
    };
    let bench = generate_synthetic(&spec).unwrap();
    let cands = bench.candidates();
    let cfg = EvalConfig::default();
    let mut group = c.benchmark_group("evaluate_methods");
    group.sample_size(20);
    group.bench_function("smi", |b| {
        b.iter(|| evaluate_methods(&cands, &bench.aux, &[Method::Smi], &cfg).unwrap())
    });
    let ddi = [Method::Baseline {
        baseline: BaselineMethod::Ddi,
    }];
    group.bench_function("ddi", |b| {
        b.iter(|| evaluate_methods(&cands, &bench.aux, &ddi, &cfg).unwrap())
    });
    group.finish();
    c.bench_function("generate_synthetic/60x500", |b| {
        b.iter(|| generate_synthetic(&spec).unwrap())
    });
}

criterion_group!(benches, evaluate);
criterion_main!(benches);
