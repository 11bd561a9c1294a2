use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use extcontrol::estimators::{self, EstimatorOptions, Method};
use extcontrol::learners::{crossfit, CrossFitConfig, Forest, ForestParams, LearnerSpec, NuisanceSpecs, Task};
use extcontrol_bench::dataset;

fn forest_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("forest_fit");
    for n in [200, 800] {
        let ds = dataset(n * 3 / 4, n / 4);
        let p = ds.covariates().ncols();
        let params = ForestParams::from_spec(&LearnerSpec::random_forest().with_trees(100), Task::Regression, p);
        group.bench_with_input(BenchmarkId::from_parameter(n), &ds, |b, ds| {
            b.iter(|| Forest::fit(ds.covariates(), ds.outcome(), None, &params, 1))
        });
    }
    group.finish();
}

fn crossfit_and_estimate(c: &mut Criterion) {
    let ds = dataset(150, 50);
    let cfg = CrossFitConfig::default().with_seed(3);
    let linear = NuisanceSpecs::default();
    let forest = NuisanceSpecs::new(LearnerSpec::random_forest().with_trees(100), LearnerSpec::random_forest().with_trees(100));
    c.bench_function("crossfit_linear", |b| b.iter(|| crossfit(&ds, &linear, &cfg).unwrap()));
    c.bench_function("crossfit_forest", |b| b.iter(|| crossfit(&ds, &forest, &cfg).unwrap()));
    let fits = crossfit(&ds, &linear, &cfg).unwrap();
    let opts = EstimatorOptions::default();
    for m in [Method::Aipw, Method::Tmle] {
        c.bench_function(&format!("estimate_{m}"), |b| b.iter(|| estimators::estimate(m, &ds, &fits, &opts).unwrap()));
    }
}

criterion_group!(benches, forest_fit, crossfit_and_estimate);
criterion_main!(benches);
