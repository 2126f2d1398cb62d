use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use parbart::cluster::fit_local_cluster;
use parbart::{fit_serial, FitConfig};
use parbart_bench::friedman;

const ITERATIONS: usize = 5;

fn config(m: usize) -> FitConfig {
    FitConfig { m, draws: ITERATIONS, burn: ITERATIONS - 1, seed: 3, ..Default::default() }
}

fn serial_iterations(c: &mut Criterion) {
    let mut group = c.benchmark_group("serial_iterations");
    group.sample_size(10);
    for n in [1000, 4000, 16000] {
        let data = friedman(n, n as u64);
        let cfg = config(50);
        group.throughput(Throughput::Elements((n * ITERATIONS) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| fit_serial(data, &cfg).unwrap())
        });
    }
    group.finish();
}

fn cluster_iterations(c: &mut Criterion) {
    let mut group = c.benchmark_group("cluster_iterations");
    group.sample_size(10);
    let data = friedman(8000, 7);
    let cfg = config(50);
    for p in [1, 2, 4] {
        group.bench_with_input(BenchmarkId::new("workers", p), &p, |b, &p| {
            b.iter(|| fit_local_cluster(&data, &cfg, p).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, serial_iterations, cluster_iterations);
criterion_main!(benches);
