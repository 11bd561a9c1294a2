use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use extcontrol_bench::chain_swig;

fn verify(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_adjustment");
    for k in [4, 8, 16] {
        let g = chain_swig(k);
        let names: Vec<String> = (1..=k).map(|i| format!("W{i}")).collect();
        let adjust: Vec<&str> = names.iter().map(String::as_str).collect();
        group.bench_with_input(BenchmarkId::from_parameter(k), &adjust, |b, z| b.iter(|| g.verify_adjustment(z).unwrap()));
    }
    group.finish();
}

fn minimal_sets(c: &mut Criterion) {
    let mut group = c.benchmark_group("minimal_adjustment_sets");
    for k in [4, 8] {
        let g = chain_swig(k);
        group.bench_with_input(BenchmarkId::from_parameter(k), &g, |b, g| b.iter(|| g.minimal_adjustment_sets(k).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, verify, minimal_sets);
criterion_main!(benches);
