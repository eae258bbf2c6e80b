//! Serial vs data-parallel execution of the chunked hot paths.
//!
//! Run with `--no-default-features` to measure the fallback build, where the
//! parallel mode also runs serially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use s2dm::difftrain::{loss_and_grads, Objective, StepDraw};
use s2dm::evalkit::{make_dataset, random_directions, sliced_wasserstein_with, DatasetSpec};
use s2dm::oracle::chain_vs_marginal;
use s2dm::par::ExecMode;
use s2dm::rng;
use s2dm::samplers::{sample, SamplerSpec};
use s2dm::schedule::{build_stride, ScheduleParams, SkipPlan};
use s2dm::smallnet::init_params;
use s2dm::SampleBatch;

const MODES: [(&str, ExecMode); 2] = [("serial", ExecMode::Serial), ("parallel", ExecMode::Parallel)];

fn schedule() -> s2dm::schedule::NoiseSchedule {
    ScheduleParams {
        steps: 100,
        beta_start: 1e-3,
        beta_end: 0.2,
    }
    .build()
    .unwrap()
}

fn training_step(c: &mut Criterion) {
    let sched = schedule();
    let plan = SkipPlan::new(&sched, 10).unwrap();
    let net = init_params(2, &[128, 128], 32, 100, 1).unwrap();
    let n = 512;
    let x0 = make_dataset(&DatasetSpec {
        n,
        ..DatasetSpec::default()
    })
    .unwrap();
    let mut eps = SampleBatch::zeros(n, 2);
    rng::fill_normal(&mut rng::stream(2, "bench"), eps.values_mut());
    let t: Vec<usize> = (0..n).map(|i| 1 + i % 100).collect();
    let draw = StepDraw { x0, t, eps };
    let obj = Objective {
        sched: &sched,
        plan: &plan,
        w_base: 0.5,
        w_skip: 0.5,
    };
    let mut g = c.benchmark_group("training_step");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, n), |b| {
            b.iter(|| loss_and_grads(&net, &obj, black_box(&draw), mode).unwrap())
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let sched = schedule();
    let net = init_params(2, &[64, 64], 32, 100, 1).unwrap();
    let spec = SamplerSpec::ddim(build_stride(100, 20).unwrap(), 0.0);
    let mut g = c.benchmark_group("ddim_sample");
    g.sample_size(20);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, 2048), |b| {
            b.iter(|| sample(&net, &sched, &spec, black_box(2048), 3, mode).unwrap())
        });
    }
    g.finish();
}

fn sliced_wasserstein(c: &mut Criterion) {
    let a = make_dataset(&DatasetSpec {
        n: 4096,
        seed: 1,
        ..DatasetSpec::default()
    })
    .unwrap();
    let b = make_dataset(&DatasetSpec {
        n: 4096,
        seed: 2,
        ..DatasetSpec::default()
    })
    .unwrap();
    let dirs = random_directions(2, 256, 0);
    let mut g = c.benchmark_group("sliced_wasserstein");
    g.sample_size(20);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, 256), |bch| {
            bch.iter(|| sliced_wasserstein_with(black_box(&a), &b, &dirs, mode).unwrap())
        });
    }
    g.finish();
}

fn forward_chain(c: &mut Criterion) {
    let sched = schedule();
    let mut g = c.benchmark_group("forward_chain");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, 100_000), |b| {
            b.iter(|| chain_vs_marginal(&sched, 100, black_box(100_000), 0.5, 4, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, training_step, sampling, sliced_wasserstein, forward_chain);
criterion_main!(benches);
