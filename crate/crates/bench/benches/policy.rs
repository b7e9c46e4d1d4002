use std::hint::black_box;

use bwsl_bench::{input_at, market, params};
use bwsl_core::backtest::{run_policy, BacktestConfig};
use bwsl_core::interpret::all_sensitivities;
use bwsl_core::policy::{policy_forward, record_forward, PolicyConfig};
use bwsl_core::trainer::{train, TrainConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn forward_backward(c: &mut Criterion) {
    let panel = market(1);
    let input = input_at(&panel, 100, 12);
    for hidden in [16, 32] {
        let p = params(PolicyConfig { hidden, ..Default::default() }, 1);
        c.bench_function(&format!("forward I=50 K=12 H={hidden}"), |b| {
            b.iter(|| policy_forward(black_box(&p), black_box(&input)).unwrap())
        });
        c.bench_function(&format!("forward+backward I=50 K=12 H={hidden}"), |b| {
            b.iter(|| {
                let mut fwd = record_forward(&p, &input).unwrap();
                let total = fwd.tape.sum(fwd.scores).unwrap();
                fwd.tape.backward(total, 1.0).unwrap()
            })
        });
    }
}

fn workloads(c: &mut Criterion) {
    let panel = market(2);
    let p = params(PolicyConfig::default(), 2);
    let mut group = c.benchmark_group("workloads");
    group.sample_size(10);
    let train_panel = panel.slice(0, 168).unwrap();
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    group.bench_function("train epoch N=16 T=12", |b| b.iter(|| train(&train_panel, p.clone(), &cfg).unwrap()));
    let input = input_at(&panel, 100, 12);
    group.bench_function("sensitivities I=50 K=12", |b| b.iter(|| all_sensitivities(&p, &input).unwrap()));
    let bc = BacktestConfig::default();
    group.bench_function("backtest 70 months", |b| b.iter(|| run_policy(&panel, &p, 168..238, &bc).unwrap()));
    group.finish();
}

criterion_group!(benches, forward_backward, workloads);
criterion_main!(benches);
