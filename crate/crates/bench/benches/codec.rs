use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use parbart::protocol::{decode, encode, Message};
use parbart::sampler::{MoveStats, SuffStats};
use std::hint::black_box;

fn fixed_messages(c: &mut Criterion) {
    let msgs = [
        ("birth_proposal", Message::BirthProposal { node: 5, var: 3, cut: 41 }),
        (
            "move_stats",
            Message::MoveStats(MoveStats { n_left: 120, n_right: 80, sum_left: 1.5, sum_right: -0.25 }),
        ),
        ("birth_accept", Message::BirthAccept { node: 5, var: 3, cut: 41, mu_left: 0.1, mu_right: -0.2 }),
    ];
    let mut group = c.benchmark_group("fixed");
    for (name, msg) in &msgs {
        let bytes = encode(msg).unwrap();
        group.bench_function(BenchmarkId::new("encode", name), |b| b.iter(|| encode(black_box(msg)).unwrap()));
        group.bench_function(BenchmarkId::new("decode", name), |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
    }
    group.finish();
}

fn leaf_records(c: &mut Criterion) {
    let mut group = c.benchmark_group("mu_stats");
    for leaves in [2, 8, 32] {
        let recs = vec![SuffStats { n: 17, sum: 0.5, sumsq: 1.25 }; leaves];
        let msg = Message::MuStats(recs);
        let bytes = encode(&msg).unwrap();
        group.throughput(Throughput::Bytes(bytes.len() as u64));
        group.bench_with_input(BenchmarkId::new("round_trip", leaves), &msg, |b, msg| {
            b.iter(|| decode(&encode(black_box(msg)).unwrap()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fixed_messages, leaf_records);
criterion_main!(benches);
