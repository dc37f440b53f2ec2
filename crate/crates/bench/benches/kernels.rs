use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pnplab::experiments::default_prior;
use pnplab::{estimate_delta_opt, pnp_pgd, tweedie_scale, Denoise, Denoiser, OperatorSpec, PnpConfig, Signal};

fn mmse_denoise(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmse_denoise");
    for n in [4usize, 16, 64] {
        let prior = Arc::new(default_prior(n).unwrap());
        let d = Denoiser::exact_mmse(prior.clone(), 0.1).unwrap();
        let y = prior.sample_pairs(0.1, 1, 0).unwrap().pairs[0].noisy.clone();
        group.bench_with_input(BenchmarkId::from_parameter(n), &y, |b, y| b.iter(|| d.denoise(black_box(y)).unwrap()));
    }
    group.finish();
}

fn pnp_solve(c: &mut Criterion) {
    let n = 64;
    let prior = Arc::new(default_prior(n).unwrap());
    let op = OperatorSpec::mask(n, 0.2, 0).build(n).unwrap();
    let d = tweedie_scale(Denoiser::exact_mmse(prior.clone(), 0.1).unwrap(), 2f64.sqrt()).unwrap();
    let y = op.apply(&prior.sample_clean(0, 0)).unwrap();
    let cfg = PnpConfig { record_history: false, ..PnpConfig::default() };
    let x0 = Signal::zeros(n);
    c.bench_function("pnp_pgd/mask64_mmse", |b| b.iter(|| pnp_pgd(&op, black_box(&y), &d, &cfg, &x0).unwrap()));
}

fn delta_opt(c: &mut Criterion) {
    let prior = Arc::new(default_prior(4).unwrap());
    let d = Denoiser::mismatched_mmse(prior.clone(), 0.2, 0.1).unwrap();
    let mut group = c.benchmark_group("estimate_delta_opt");
    group.sample_size(10);
    group.bench_function("gmm4_10k", |b| b.iter(|| estimate_delta_opt(&d, &prior, 0.1, 10_000, black_box(0)).unwrap()));
    group.finish();
}

criterion_group!(benches, mmse_denoise, pnp_solve, delta_opt);
criterion_main!(benches);
