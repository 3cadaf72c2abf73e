use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use implab_core::numcore::{Graph, Tensor};
use std::hint::black_box;

fn filled(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5)
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let (a, b) = (filled(&[n, n]), filled(&[n, n]));
        group.bench_with_input(BenchmarkId::new("forward_backward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, y) = (g.param(a.clone()), g.param(b.clone()));
                let z = g.matmul(x, y).unwrap();
                let s = g.sum(z).unwrap();
                black_box(g.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

fn attention_block(c: &mut Criterion) {
    // 64 sequences of 16 positions, 2 heads of width 32.
    let q = filled(&[128, 16, 32]);
    let k = filled(&[128, 16, 32]);
    c.bench_function("masked_softmax_scores", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (qv, kv) = (g.param(q.clone()), g.param(k.clone()));
            let s = g.batch_matmul(qv, kv, true).unwrap();
            let m = g.causal_mask(s).unwrap();
            let p = g.softmax(m).unwrap();
            let total = g.sum(p).unwrap();
            black_box(g.backward(total).unwrap());
        })
    });
}

criterion_group!(benches, matmul, attention_block);
criterion_main!(benches);
