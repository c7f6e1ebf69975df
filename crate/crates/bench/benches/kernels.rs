use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use netabs_bench::random_lp;
use netabs_core::model::{build_room_network, RoomNetworkParams};
use netabs_core::quantize::make_grid;
use netabs_core::scenario::min_sample_size;
use netabs_core::scenario::simplex::solve;
use netabs_core::synthesize::{
    enumerate_abstraction, safe_cells, safety_synthesis_with, InputPolicy,
};

fn simplex(c: &mut Criterion) {
    let mut g = c.benchmark_group("simplex");
    for rows in [50, 200, 500] {
        let lp = random_lp(5, rows, rows as u64);
        g.bench_with_input(BenchmarkId::from_parameter(rows), &lp, |b, lp| {
            b.iter(|| solve(black_box(lp)).unwrap())
        });
    }
    g.finish();
}

fn sample_size(c: &mut Criterion) {
    c.bench_function("min_sample_size/case_study", |b| {
        b.iter(|| min_sample_size(black_box(&[0.001]), black_box(1e-4), black_box(7)).unwrap())
    });
}

fn synthesis(c: &mut Criterion) {
    let net = build_room_network(&RoomNetworkParams::with_rooms(5)).unwrap();
    let room = &net.rooms[0];
    let sg = make_grid(&room.signature().state_box, 0.025).unwrap();
    let dg = make_grid(&room.signature().disturbance_box, 0.025).unwrap();
    let fts = enumerate_abstraction(room, &sg, &dg).unwrap();
    let safe = safe_cells(&sg, &room.signature().state_box);
    c.bench_function("enumerate_abstraction/room", |b| {
        b.iter(|| enumerate_abstraction(black_box(room), &sg, &dg).unwrap())
    });
    for policy in [InputPolicy::First, InputPolicy::Deepest] {
        c.bench_function(&format!("safety_synthesis/{policy:?}"), |b| {
            b.iter(|| safety_synthesis_with(black_box(&fts), &safe, policy).unwrap())
        });
    }
}

criterion_group!(benches, simplex, sample_size, synthesis);
criterion_main!(benches);
