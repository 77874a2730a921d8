use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wlax::par;
use wlax::pva::Cutoffs;
use wlax::{suites, worked};

fn principal_checks() -> Vec<worked::Check> {
    use worked::Group::*;
    worked::checks().into_iter().filter(|c| matches!(c.group, Kdv | SawadaKotera | KaupKupershmidt | KdvVariants | Miura)).collect()
}

fn modes(c: &mut Criterion) {
    let checks = principal_checks();
    let mut g = c.benchmark_group("suites");
    g.sample_size(10);
    for (name, sequential) in [("parallel", false), ("sequential", true)] {
        g.bench_with_input(BenchmarkId::new("worked-principal", name), &sequential, |b, &s| {
            par::set_sequential(s);
            b.iter(|| worked::run(&checks));
        });
        g.bench_with_input(BenchmarkId::new("adler-rank-2", name), &sequential, |b, &s| {
            par::set_sequential(s);
            b.iter(|| suites::adler_suite(Cutoffs::new(-4, -4), 2));
        });
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, modes);
criterion_main!(benches);
