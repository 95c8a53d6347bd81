//! Throughput benchmarks for the hot paths: model construction, sweep
//! evaluation under both out-of-range schemes, finite-horizon
//! prediction, and slot-level simulation.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ontime_core::analytics::{expected_on_time_count, OnTimeSpec};
use ontime_core::channel::{RngSeed, SuccessProbability};
use ontime_core::mdp::{
    build_model_truncated, Action, ActionSpace, MdpModel, StateSpace, Truncation,
};
use ontime_core::montecarlo::{replicate, SimConfig, TransmissionMode};
use ontime_core::solver::{expected_reward_scheduled, Policy};

fn p_ref() -> SuccessProbability {
    SuccessProbability::new(0.2).expect("valid probability")
}

fn spec_ref() -> OnTimeSpec {
    OnTimeSpec::new(5, 1).expect("valid timing")
}

fn model(truncation: Truncation) -> MdpModel {
    build_model_truncated(
        p_ref(),
        spec_ref(),
        StateSpace::new(-200, 200).expect("valid interval"),
        ActionSpace::new(10, 10),
        truncation,
    )
    .expect("model builds")
}

fn bench_model_build(c: &mut Criterion) {
    c.bench_function("model_build_401_states_21_actions", |b| {
        b.iter(|| black_box(model(Truncation::ClampAndSum)));
    });
}

fn bench_sweeps(c: &mut Criterion) {
    // The fold-at-edges scheme takes the closed-form geometric recurrences;
    // renormalization falls back to materialized banded-row dot products.
    let fast = model(Truncation::ClampAndSum);
    let generic = model(Truncation::Renormalize);
    let mut group = c.benchmark_group("ten_reward_sweeps");
    group.bench_function("closed_form_recurrences", |b| {
        b.iter(|| black_box(expected_reward_scheduled(&fast, 10).final_rate()));
    });
    group.bench_function("banded_row_products", |b| {
        b.iter(|| black_box(expected_reward_scheduled(&generic, 10).final_rate()));
    });
    group.finish();
}

fn bench_closed_form(c: &mut Criterion) {
    let p = p_ref();
    let spec = spec_ref();
    c.bench_function("expected_count_10k_packets", |b| {
        b.iter(|| black_box(expected_on_time_count(p, spec, 10_000)));
    });
}

fn bench_simulation(c: &mut Criterion) {
    let p = p_ref();
    let spec = spec_ref();
    let mut group = c.benchmark_group("simulate_16k_packets");
    group.bench_function("uncontrolled", |b| {
        b.iter(|| {
            black_box(replicate(&SimConfig {
                p,
                spec,
                packets: 2_000,
                mode: TransmissionMode::Random,
                master_seed: RngSeed(7),
                replications: 8,
            }))
        });
    });
    // A repeat-everywhere policy exercises the retransmission protocol
    // without needing a solve.
    let states = StateSpace::new(-200, 200).expect("valid interval");
    let actions = vec![Action::Repeat(5); states.len()];
    let policy = Policy::new(states, actions);
    group.bench_function("repeat_scheduled", |b| {
        b.iter(|| {
            black_box(replicate(&SimConfig {
                p,
                spec,
                packets: 2_000,
                mode: TransmissionMode::Scheduled(policy.clone()),
                master_seed: RngSeed(7),
                replications: 8,
            }))
        });
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_model_build, bench_sweeps, bench_closed_form, bench_simulation
}
criterion_main!(benches);
