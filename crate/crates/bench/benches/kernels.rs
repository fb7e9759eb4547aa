use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use poslab::complexity::covering_number;
use poslab::datagen::gen_circle;
use poslab::dba::{self, DBAConfig, DBAParams};
use poslab::numerics::{orthonormalize, svd};
use poslab::projector::{project_union, DEFAULT_TIE_TOL};
use poslab::rng::{self, tag};
use poslab::{Matrix, UnionProjector};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 0, 0, tag::USER);
    Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols)).unwrap()
}

fn numerics(c: &mut Criterion) {
    let a = gaussian(64, 16, 1);
    c.bench_function("svd 64x16", |b| b.iter(|| svd(black_box(&a)).unwrap()));
    c.bench_function("qr 64x16", |b| b.iter(|| orthonormalize(black_box(&a)).unwrap()));
}

fn projection(c: &mut Criterion) {
    let spans: Vec<Matrix> = (0..4).map(|k| orthonormalize(&gaussian(32, 3, 10 + k)).unwrap()).collect();
    let p = UnionProjector::from_spans(&spans, DEFAULT_TIE_TOL).unwrap();
    let s = gaussian(32, 1, 2).into_vec();
    c.bench_function("project_union 4x3 in R^32", |b| b.iter(|| project_union(&p, black_box(&s)).unwrap()));
}

fn cover(c: &mut Criterion) {
    let data = gen_circle(2000, 0.0, 3).unwrap();
    c.bench_function("greedy cover 2000 circle points", |b| b.iter(|| covering_number(black_box(&data), 0.1).unwrap()));
}

fn dba_block(c: &mut Criterion) {
    let cfg = DBAConfig { tokens: 8, channels: 4, lambda_orth: 1.0, seed: 4 };
    let p = DBAParams::init(&cfg).unwrap();
    let s = gaussian(8, 4, 5);
    let target = dba::token_norm(&gaussian(8, 4, 6)).0;
    c.bench_function("dba block forward 8x4", |b| b.iter(|| dba::block_forward(&p, black_box(&s)).unwrap()));
    c.bench_function("dba block grad 8x4", |b| b.iter(|| dba::block_grad(&p, black_box(&s), &target, 1.0).unwrap()));
}

criterion_group!(benches, numerics, projection, cover, dba_block);
criterion_main!(benches);
