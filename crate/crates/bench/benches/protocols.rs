use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ulfm_bench::{agree_once, collective_once, shrink_after};
use ulfm_sim::CollectiveKind;

fn agreement(c: &mut Criterion) {
    let mut g = c.benchmark_group("agree");
    for n in [16, 64, 256] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| agree_once(n, 1)));
    }
    g.finish();
}

fn shrink(c: &mut Criterion) {
    let mut g = c.benchmark_group("shrink");
    for n in [16, 64] {
        g.bench_with_input(BenchmarkId::new("one_crash", n), &n, |b, &n| {
            b.iter(|| shrink_after(n, 1, 5))
        });
        g.bench_with_input(BenchmarkId::new("three_crashes", n), &n, |b, &n| {
            b.iter(|| shrink_after(n, 3, 5))
        });
    }
    g.finish();
}

fn collectives(c: &mut Criterion) {
    let mut g = c.benchmark_group("collective");
    for (name, kind) in [
        ("bcast", CollectiveKind::Bcast),
        ("allreduce", CollectiveKind::Allreduce),
    ] {
        for uniform in [false, true] {
            let id = BenchmarkId::new(name, if uniform { "uniform" } else { "local" });
            g.bench_function(id, |b| b.iter(|| collective_once(64, kind, 1024, uniform)));
        }
    }
    g.finish();
}

criterion_group!(benches, agreement, shrink, collectives);
criterion_main!(benches);
