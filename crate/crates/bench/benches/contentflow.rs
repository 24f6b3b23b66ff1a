use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use contentflow::controller::select_cache_for_storage;
use contentflow::protocol::sample_messages;
use contentflow::simeval::run_cell;
use contentflow::{decode, encode, load_topology, NodeId};

const SCENARIO: &str = include_str!("../../../fixtures/scenario.json");

fn paths(c: &mut Criterion) {
    let g = load_topology(SCENARIO).unwrap();
    let (s1, cache) = (NodeId::new("s1"), NodeId::new("cache"));
    let writes = Default::default();
    c.bench_function("enumerate_paths s1->cache", |b| b.iter(|| g.enumerate_paths(black_box(&s1), &cache, 32)));
    let found = g.enumerate_paths(&s1, &cache, 32);
    c.bench_function("select_min_cost_path", |b| b.iter(|| g.select_min_cost_path(black_box(&found), 8e6).is_ok()));
    c.bench_function("select_cache_for_storage", |b| {
        b.iter(|| select_cache_for_storage(&g, black_box(&s1), std::slice::from_ref(&cache), 8e6, 32, &writes).unwrap())
    });
}

fn codec(c: &mut Criterion) {
    let msgs = sample_messages();
    let frames: Vec<Vec<u8>> = msgs.iter().map(|m| encode(m).unwrap()).collect();
    c.bench_function("encode all types", |b| b.iter(|| msgs.iter().map(|m| encode(black_box(m)).unwrap().len()).sum::<usize>()));
    c.bench_function("decode all types", |b| b.iter(|| frames.iter().map(|f| decode(black_box(f)).unwrap().1).sum::<usize>()));
}

fn two_link(c: &mut Criterion) {
    let mut group = c.benchmark_group("two_link_cell");
    group.sample_size(20);
    for alpha in [1.1, 2.5] {
        group.bench_function(format!("alpha {alpha} horizon 10000"), |b| {
            b.iter(|| run_cell(black_box(alpha), 0.95, 10_000, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, paths, codec, two_link);
criterion_main!(benches);
