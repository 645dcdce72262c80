use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use predregret::asymptotics::{a_functional, asymptotic_regret, predictive_loss};
use predregret::exact::{mc_regret, posterior_predictive_regret, McOptions};
use predregret::numerics::{adaptive_integrate, cached_rule, integrate, RuleKind, SeededStream};
use predregret::priors::{tau_k, CompactPriorSequence, Construction, HClassDensity};
use predregret::{ModelFamily, PriorSpec};

fn bernoulli_exact(c: &mut Criterion) {
    let model = ModelFamily::bernoulli();
    let prior = PriorSpec::beta(1.5, 1.5).unwrap();
    let mut g = c.benchmark_group("bernoulli_exact_regret");
    for n in [32usize, 256, 2048] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| posterior_predictive_regret(&model, &prior, black_box(&[0.3]), n, n).unwrap())
        });
    }
    g.finish();
}

fn asymptotic(c: &mut Criterion) {
    let bern = ModelFamily::bernoulli();
    let beta = PriorSpec::beta(1.5, 1.5).unwrap();
    c.bench_function("a_functional/bernoulli", |b| {
        b.iter(|| a_functional(&bern, &beta, black_box(&[0.3])).unwrap())
    });
    let ls = ModelFamily::normal_ls();
    let p = PriorSpec::power_sigma(&ls, 1.0).unwrap();
    c.bench_function("predictive_loss/normal-ls", |b| {
        b.iter(|| predictive_loss(&ls, &p, black_box(&[0.5, 0.2])).unwrap())
    });
    let seq = CompactPriorSequence::new(Construction::LocationLogscale, HClassDensity::default_member(), 8.0).unwrap();
    let tau = tau_k(&seq, &ls).unwrap();
    c.bench_function("asymptotic_regret/location-logscale", |b| {
        b.iter(|| asymptotic_regret(&ls, black_box(&tau), &p).unwrap())
    });
}

fn quadrature(c: &mut Criterion) {
    let rule = cached_rule(RuleKind::Legendre, 64);
    c.bench_function("gauss_legendre_64", |b| {
        b.iter(|| integrate(&rule, |x| black_box(x).cos()))
    });
    c.bench_function("adaptive_integrate", |b| {
        b.iter(|| adaptive_integrate(|x| (-x * x).exp(), -8.0, black_box(8.0), 1e-12).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let model = ModelFamily::bernoulli();
    let prior = PriorSpec::beta(2.0, 3.0).unwrap();
    let opts = McOptions {
        stream: SeededStream::new(1, 0),
        replicates: 500,
    };
    c.bench_function("mc_regret/bernoulli/500", |b| {
        b.iter(|| mc_regret(&model, &prior, black_box(&[0.3]), 5, 3, &opts).unwrap())
    });
}

criterion_group!(benches, bernoulli_exact, asymptotic, quadrature, monte_carlo);
criterion_main!(benches);
