//! Microbenchmarks of the three hot paths: a single shrinkage trial
//! (train + flush + measured run + timed probe), a full 30-trial sweep
//! point, and one fuzzer differential (12 interleaved trial pairs plus
//! the equal-tag control).

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mtesim_core::fuzzer::{execute_differential, seed_corpus, FuzzContext};
use mtesim_core::gadgets::{build_v1, Gadget, TrialHarness, V1Params};
use mtesim_core::rng;
use mtesim_core::speccore::CoreProfile;

fn leaky_gadget() -> Gadget {
    build_v1(V1Params::default(), 3).unwrap()
}

fn v1_trial(c: &mut Criterion) {
    let profile = CoreProfile::x3like();
    let gadget = leaky_gadget();
    let mut harness = TrialHarness::new(&gadget, &profile);
    let mut rng = rng::stream(1, 0);
    c.bench_function("v1_trial", |b| {
        b.iter(|| harness.run_trial(&gadget, black_box(9), &mut rng).unwrap().hit)
    });
}

fn sweep_point(c: &mut Criterion) {
    let profile = CoreProfile::x3like();
    let gadget = leaky_gadget();
    c.bench_function("sweep_point_30_trials", |b| {
        b.iter(|| {
            let mut harness = TrialHarness::new(&gadget, &profile);
            let mut rng = rng::stream(1, 0);
            (0..30)
                .filter(|_| harness.run_trial(&gadget, black_box(9), &mut rng).unwrap().hit)
                .count()
        })
    });
}

fn fuzz_differential(c: &mut Criterion) {
    let profile = CoreProfile::x3like();
    let ctx = FuzzContext::generate(&mut rng::stream(2, 0));
    // The deepest seed-corpus case: a wrong-path load of the guess.
    let case = seed_corpus(&ctx).into_iter().nth(1).unwrap();
    c.bench_function("fuzz_differential", |b| {
        b.iter(|| {
            let diff = execute_differential(&profile, &ctx, &case, black_box(3), 9, 12);
            let ctrl = execute_differential(&profile, &ctx, &case, black_box(3), 3, 12);
            (diff, ctrl)
        })
    });
}

criterion_group!(benches, v1_trial, sweep_point, fuzz_differential);
criterion_main!(benches);
