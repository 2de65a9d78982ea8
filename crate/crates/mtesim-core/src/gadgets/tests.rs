use super::harness::{ablation, sweep_v1_window, sweep_v2_slide_gap, AblationConfig, CacheClass, SweepConfig, TrialHarness};
use super::*;
use crate::rng;
use crate::speccore::CoreProfile;

const SECRET: u8 = 3;
const WRONG: u8 = 9;

fn rate(gadget: &Gadget, profile: &CoreProfile, guess_tag: u8, trials: usize) -> f64 {
    let cfg = SweepConfig { trials, seed: 7, ..SweepConfig::default() };
    let mut harness = TrialHarness::with_config(gadget, profile, &cfg);
    let mut rng = rng::stream(7, 0);
    let mut hits = 0usize;
    for _ in 0..trials {
        if harness.run_trial(gadget, guess_tag, &mut rng).expect("trial").hit {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

fn assert_rate(actual: f64, expected: f64) {
    assert!(
        (actual - expected).abs() < 1e-12,
        "rate {actual} differs from expected {expected}"
    );
}

#[test]
fn builders_reject_bad_parameters() {
    let bad_len = V1Params { len_check: 0, ..V1Params::default() };
    assert!(matches!(build_v1(bad_len, SECRET), Err(GadgetError::InvalidParams(_))));
    assert!(build_v1(V1Params::default(), 0x10).is_err());
    assert!(build_v2(V2Params::default(), 0x10).is_err());
    assert!(build_v1_variant(V1Variant::ListInBranch, 0x10).is_err());
}

#[test]
fn built_programs_are_structurally_valid() {
    let mut gadgets = vec![build_template(SECRET)];
    for len in [1usize, 2, 4, 8] {
        for kind in [TestKind::IndepLd, TestKind::IndepSt, TestKind::DepLd, TestKind::DepSt] {
            let params = V1Params { len_check: len, test_kind: kind, ..V1Params::default() };
            gadgets.push(build_v1(params, SECRET).unwrap());
        }
    }
    for slide in 0..6 {
        gadgets.push(build_v2(V2Params { slide, gap: slide % 5, ..V2Params::default() }, SECRET).unwrap());
    }
    gadgets.push(build_v1_variant(V1Variant::ListInBranch, SECRET).unwrap());
    gadgets.push(build_v1_variant(V1Variant::ListMerged, SECRET).unwrap());
    for gadget in &gadgets {
        assert!(gadget.program.is_valid(), "invalid program for {:?}", gadget.kind);
    }
}

#[test]
fn shrinkage_rates_follow_check_length_and_gap() {
    let profile = CoreProfile::x3like();
    let cases: &[(usize, usize, f64)] = &[
        // One check per run never charges: flat hits.
        (1, 12, 1.0),
        // Two checks charge 2 per run; suppression reaches the test
        // access only once the filler chain is long enough.
        (2, 9, 1.0),
        (2, 10, 5.0 / 6.0),
        (2, 12, 5.0 / 6.0),
        // Four checks charge 4 per run: depletion every third trial,
        // onset one filler earlier.
        (4, 8, 1.0),
        (4, 9, 2.0 / 3.0),
        (4, 12, 2.0 / 3.0),
        // Eight checks cross mid-run twice in each period of three.
        (8, 9, 2.0 / 3.0),
        (8, 12, 1.0 / 3.0),
    ];
    for &(len, gap, expected) in cases {
        let params = V1Params { len_check: len, len_gap: gap, ..V1Params::default() };
        let gadget = build_v1(params, SECRET).unwrap();
        assert_rate(rate(&gadget, &profile, WRONG, 30), expected);
        assert_rate(rate(&gadget, &profile, SECRET, 30), 1.0);
    }
}

#[test]
fn shrinkage_store_test_uses_ownership_fill() {
    let profile = CoreProfile::x3like();
    let params = V1Params { test_kind: TestKind::IndepSt, ..V1Params::default() };
    let gadget = build_v1(params, SECRET).unwrap();
    assert_rate(rate(&gadget, &profile, WRONG, 30), 5.0 / 6.0);
    assert_rate(rate(&gadget, &profile, SECRET, 30), 1.0);
}

#[test]
fn shrinkage_needs_the_shrink_feature() {
    // Without confidence shrinkage the wrong-tag series stays cached.
    let mut profile = CoreProfile::x3like();
    profile.v1_shrink_enabled = false;
    let gadget = build_v1(V1Params::default(), SECRET).unwrap();
    assert_rate(rate(&gadget, &profile, WRONG, 30), 1.0);
}

#[test]
fn window_sweep_has_sharp_charge_horizon() {
    let profile = CoreProfile::x3like();
    let cfg = SweepConfig { trials: 30, seed: 11, ..SweepConfig::default() };
    let points = sweep_v1_window(&profile, &cfg).unwrap();
    let lookup = |series: &str, axis: u64| {
        points
            .iter()
            .find(|p| p.series == series && p.axis == axis)
            .unwrap_or_else(|| panic!("missing point {series}@{axis}"))
            .rate
    };
    for kind in ["ld", "st"] {
        for filler in ["orr_dep", "orr_indep", "nop"] {
            let mismatch = format!("{kind}_{filler}_mismatch");
            let matched = format!("{kind}_{filler}_match");
            // Both checks inside the charge window: periodic leak.
            for w in [0u64, 6, 12, 18, 24, 26] {
                assert_rate(lookup(&mismatch, w), 5.0 / 6.0);
            }
            // Checks dispatched past the window never charge.
            for w in [27u64, 28, 30] {
                assert_rate(lookup(&mismatch, w), 1.0);
            }
            for w in [0u64, 12, 26, 30] {
                assert_rate(lookup(&matched, w), 1.0);
            }
        }
    }
}

#[test]
fn forward_gating_leaks_only_same_group_pairs() {
    let profile = CoreProfile::a715like();
    let cfg = SweepConfig { trials: 8, seed: 13, ..SweepConfig::default() };
    let points = sweep_v2_slide_gap(&profile, &cfg).unwrap();
    let width = profile.dispatch_width as usize;
    for gap in 0usize..=4 {
        let mismatch: Vec<&super::harness::SweepPoint> = points
            .iter()
            .filter(|p| p.series == format!("gap{gap}_mismatch"))
            .collect();
        assert_eq!(mismatch.len(), 40);
        let mut blocked = 0usize;
        for point in &mismatch {
            let slide = point.axis as usize;
            let same_group = (slide + 2) / width == (slide + 3 + gap) / width;
            let expected = if same_group { 0.0 } else { 1.0 };
            assert_rate(point.rate, expected);
            if same_group {
                blocked += 1;
            }
        }
        // Exactly max(0, width - 1 - gap) leaking positions per window
        // of `width` consecutive slides; 40 slides = 8 windows.
        assert_eq!(blocked, 8 * (width - 1).saturating_sub(gap));
        for point in points.iter().filter(|p| p.series == format!("gap{gap}_match")) {
            assert_rate(point.rate, 1.0);
        }
    }
}

#[test]
fn forward_gating_needs_the_gate() {
    let mut profile = CoreProfile::a715like();
    profile.stlf_gating_enabled = false;
    let gadget = build_v2(V2Params::default(), SECRET).unwrap();
    assert_rate(rate(&gadget, &profile, WRONG, 8), 1.0);
}

#[test]
fn list_variants_leak_periodically() {
    let profile = CoreProfile::x3like();
    for variant in [V1Variant::ListInBranch, V1Variant::ListMerged] {
        let gadget = build_v1_variant(variant, SECRET).unwrap();
        assert_rate(rate(&gadget, &profile, WRONG, 30), 5.0 / 6.0);
        assert_rate(rate(&gadget, &profile, SECRET, 30), 1.0);
    }
}

#[test]
fn merged_list_commits_cleanly_through_the_merge_point() {
    // The committed path of the merged variant runs the final dereference
    // with the benign pointer; a trial must not see architectural faults
    // (run_trial would return an error if it did).
    let profile = CoreProfile::x3like();
    let gadget = build_v1_variant(V1Variant::ListMerged, SECRET).unwrap();
    let cfg = SweepConfig { trials: 1, seed: 3, ..SweepConfig::default() };
    let mut harness = TrialHarness::with_config(&gadget, &profile, &cfg);
    let mut rng = rng::stream(3, 0);
    for _ in 0..12 {
        harness.run_trial(&gadget, WRONG, &mut rng).expect("merged trial");
    }
}

#[test]
fn ablation_isolates_fill_and_replay_channels() {
    let profile = CoreProfile::x3like();
    let cfg = SweepConfig { trials: 60, seed: 17, ..SweepConfig::default() };
    let rows = ablation(&profile, &cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let row = |config: AblationConfig| rows.iter().find(|r| r.config == config).unwrap();

    for config in [AblationConfig::Baseline, AblationConfig::NoSe, AblationConfig::NoDp] {
        let r = row(config);
        assert_eq!(r.match_class, CacheClass::Cached, "{config:?}");
        assert_eq!(r.mismatch_class, CacheClass::Periodic, "{config:?}");
        assert_rate(r.mismatch_rate, 5.0 / 6.0);
    }
    let both = row(AblationConfig::NoSeNoDp);
    assert_eq!(both.match_class, CacheClass::Uncached);
    assert_eq!(both.mismatch_class, CacheClass::Uncached);
    assert_rate(both.match_rate, 0.0);
    assert_rate(both.mismatch_rate, 0.0);
}

#[test]
fn leak_oracle_recovers_tags_noiselessly() {
    let x3 = CoreProfile::x3like();
    let a715 = CoreProfile::a715like();
    let cfg = LeakConfig { trials_per_guess: 36, ..LeakConfig::default() };
    for secret in [0u8, 3, 9, 0xf] {
        let v1 = build_v1(V1Params::default(), secret).unwrap();
        assert_eq!(leak_tag(&v1, &x3, &cfg, 5).unwrap().best_tag, secret);
        let v2 = build_v2(V2Params::default(), secret).unwrap();
        assert_eq!(leak_tag(&v2, &a715, &cfg, 5).unwrap().best_tag, secret);
    }
}

#[test]
fn leak_oracle_reports_flat_distributions_as_ambiguous() {
    // The shrinkage gadget on a core without the shrink feature leaves
    // every guess cached: nothing to distinguish.
    let profile = CoreProfile::a715like();
    let gadget = build_v1(V1Params::default(), SECRET).unwrap();
    let cfg = LeakConfig { trials_per_guess: 12, ..LeakConfig::default() };
    match leak_tag(&gadget, &profile, &cfg, 5) {
        Err(LeakError::AmbiguousLeak { spread, .. }) => assert!(spread < 1e-9),
        other => panic!("expected ambiguous leak, got {other:?}"),
    }
}

#[test]
fn software_mitigations_close_both_families() {
    let x3 = CoreProfile::x3like();
    let a715 = CoreProfile::a715like();
    let cases: &[(Gadget, &CoreProfile, Mitigation, f64)] = &[
        // Barrier before the store test: no speculative ownership fill,
        // and trained replay never prefetches store elements.
        (
            build_v1(V1Params { test_kind: TestKind::IndepSt, ..V1Params::default() }, SECRET)
                .unwrap(),
            &x3,
            Mitigation::SbBeforeTest,
            0.0,
        ),
        // Barrier before the checks: the wrong path squashes before any
        // tagged access, so neither fill nor replay reaches the probe.
        (build_v1(V1Params::default(), SECRET).unwrap(), &x3, Mitigation::SbBeforeCheck, 0.0),
        // Padding the window past the charge horizon: leak gone because
        // the line is simply always cached.
        (build_v1(V1Params::default(), SECRET).unwrap(), &x3, Mitigation::PadWindow(30), 1.0),
        // Barrier before the store kills the forwarded pair.
        (build_v2(V2Params::default(), SECRET).unwrap(), &a715, Mitigation::SbBeforeCheck, 0.0),
        // Padding the store/load gap splits the dispatch group: forward
        // is ungated and both series stay cached.
        (build_v2(V2Params::default(), SECRET).unwrap(), &a715, Mitigation::PadStlfGap(4), 1.0),
    ];
    for (gadget, profile, mitigation, expected) in cases {
        let hardened = apply_mitigation(gadget, *mitigation).unwrap();
        let matched = rate(&hardened, profile, SECRET, 30);
        let mismatched = rate(&hardened, profile, WRONG, 30);
        assert_rate(matched, *expected);
        assert_rate(mismatched, *expected);
        assert!(
            (matched - mismatched).abs() < 0.02,
            "{mitigation:?} left a distinguishable signal"
        );
    }
}

#[test]
fn mitigations_reject_foreign_shapes() {
    let v1 = build_v1(V1Params::default(), SECRET).unwrap();
    let v2 = build_v2(V2Params::default(), SECRET).unwrap();
    let template = build_template(SECRET);
    let list = build_v1_variant(V1Variant::ListInBranch, SECRET).unwrap();
    assert_eq!(
        apply_mitigation(&v1, Mitigation::PadStlfGap(4)),
        Err(MitigationError::UnrecognizedShape)
    );
    assert_eq!(
        apply_mitigation(&v2, Mitigation::PadWindow(4)),
        Err(MitigationError::UnrecognizedShape)
    );
    assert_eq!(
        apply_mitigation(&template, Mitigation::SbBeforeTest),
        Err(MitigationError::UnrecognizedShape)
    );
    assert_eq!(
        apply_mitigation(&list, Mitigation::SbBeforeCheck),
        Err(MitigationError::UnrecognizedShape)
    );
}

#[test]
fn trials_are_deterministic_per_seed() {
    let profile = CoreProfile::x3like();
    let gadget = build_v1(V1Params::default(), SECRET).unwrap();
    let run = |seed: u64| {
        let cfg = SweepConfig { trials: 24, seed, noise_sigma: 3.0, p_evict: 0.9, ..SweepConfig::default() };
        let mut harness = TrialHarness::with_config(&gadget, &profile, &cfg);
        let mut rng = rng::stream(seed, 0);
        (0..24)
            .map(|_| harness.run_trial(&gadget, WRONG, &mut rng).unwrap().reading)
            .collect::<Vec<f64>>()
    };
    assert_eq!(run(42), run(42));
    assert_ne!(run(42), run(43));
}
