use super::diff::{classify, execute_differential, GadgetFamily};
use super::*;
use crate::rng;
use crate::speccore::CoreProfile;

fn ctx_for(seed: u64) -> FuzzContext {
    FuzzContext::generate(&mut rng::stream(seed, 0))
}

#[test]
fn context_roles_are_distinct_and_pool_points_into_probe_region() {
    let ctx = ctx_for(1);
    let mut all = vec![ctx.cond_ptr, ctx.cond_val, ctx.guess];
    all.extend(&ctx.pool);
    all.extend(&ctx.scratch);
    let unique: std::collections::BTreeSet<u8> = all.iter().map(|r| r.0).collect();
    assert_eq!(unique.len(), all.len());
    for &(reg, value) in &ctx.init_regs {
        if ctx.pool.contains(&reg) {
            let addr = crate::tagmem::TaggedPointer::from_raw(value).addr();
            assert!(addr >= PROBE_BASE && addr < PROBE_BASE + PROBE_LEN);
            assert_eq!(addr % 128, 0);
        }
    }
}

#[test]
fn mutation_respects_block_cap_and_produces_valid_programs() {
    let ctx = ctx_for(2);
    let mut rng = rng::stream(2, 9);
    let mut case = TestCase::new(vec![]);
    for _ in 0..2000 {
        case = mutate(&case, &ctx, 64, &mut rng);
        assert!(case.block.len() <= 64);
        assert!(case.program(&ctx).is_valid());
    }
}

#[test]
fn canonical_listing_collapses_register_renamings() {
    let ctx = ctx_for(3);
    let s = &ctx.scratch;
    let a = TestCase::new(vec![
        I::Ldr { dst: s[0], addr: ctx.guess },
        I::Orr { dst: s[1], a: s[0], b: s[0] },
    ]);
    let b = TestCase::new(vec![
        I::Ldr { dst: s[4], addr: ctx.guess },
        I::Orr { dst: s[2], a: s[4], b: s[4] },
    ]);
    assert_eq!(canonical_listing(&a, &ctx), canonical_listing(&b, &ctx));
    let c = TestCase::new(vec![
        I::Ldr { dst: s[4], addr: ctx.pool[0] },
        I::Orr { dst: s[2], a: s[4], b: s[4] },
    ]);
    assert_ne!(canonical_listing(&a, &ctx), canonical_listing(&c, &ctx));
}

#[test]
fn empty_candidate_has_no_signature() {
    let ctx = ctx_for(4);
    let profile = CoreProfile::x3like();
    let case = TestCase::new(vec![]);
    assert_eq!(
        execute_differential(&profile, &ctx, &case, FUZZ_SECRET_TAG, FUZZ_WRONG_TAG, 12),
        None
    );
}

#[test]
fn handwritten_shrinkage_block_signals_and_classifies() {
    // Two wrong-path guess loads charge the budget; the probe load's
    // trained prefetch replays only while fills are unsuppressed. The
    // or-chain keeps the probe access behind the engagement latency.
    let ctx = ctx_for(5);
    let s = &ctx.scratch;
    let mut block = vec![
        I::Ldr { dst: s[0], addr: ctx.guess },
        I::Ldr { dst: s[1], addr: ctx.guess },
    ];
    block.extend(std::iter::repeat(I::Orr { dst: s[2], a: s[2], b: s[2] }).take(12));
    block.push(I::Ldr { dst: s[3], addr: ctx.pool[0] });
    let case = TestCase::new(block);

    let profile = CoreProfile::x3like();
    let sig = execute_differential(&profile, &ctx, &case, FUZZ_SECRET_TAG, FUZZ_WRONG_TAG, 12);
    assert!(sig.is_some(), "expected a probe-mask differential");
    assert_eq!(
        execute_differential(&profile, &ctx, &case, FUZZ_SECRET_TAG, FUZZ_SECRET_TAG, 12),
        None,
        "equal-tag control must be clean"
    );
    assert_eq!(classify(&profile, &ctx, &case, 12), GadgetFamily::V1Family);
}

#[test]
fn handwritten_forward_gating_block_signals_and_classifies() {
    let ctx = ctx_for(6);
    let s = &ctx.scratch;
    let case = TestCase::new(vec![
        I::Str { src: ctx.pool[2], addr: ctx.guess },
        I::Ldr { dst: s[0], addr: ctx.guess },
        I::Ldr { dst: s[1], addr: s[0] },
    ]);
    let profile = CoreProfile::a715like();
    let sig = execute_differential(&profile, &ctx, &case, FUZZ_SECRET_TAG, FUZZ_WRONG_TAG, 12);
    assert!(sig.is_some());
    assert_eq!(classify(&profile, &ctx, &case, 12), GadgetFamily::V2Family);
}

#[test]
fn campaign_rediscovers_shrinkage_family() {
    let cfg = CampaignConfig { iterations: 25_000, seed: 0, ..CampaignConfig::default() };
    let report = run_campaign(&CoreProfile::x3like(), &cfg);
    assert!(report.counts.v1 >= 1, "no shrinkage finds: {:?}", report.counts);
    assert_eq!(report.counts.unknown, 0);
}

#[test]
fn campaign_rediscovers_forward_gating_family() {
    let cfg = CampaignConfig { iterations: 12_000, seed: 1, ..CampaignConfig::default() };
    let report = run_campaign(&CoreProfile::a715like(), &cfg);
    assert!(report.counts.v2 >= 1, "no forward-gating finds: {:?}", report.counts);
    assert_eq!(report.counts.unknown, 0);
}

#[test]
fn campaign_on_hardened_core_finds_nothing() {
    let mut profile = CoreProfile::x3like();
    profile.v1_shrink_enabled = false;
    profile.stlf_gating_enabled = false;
    let cfg = CampaignConfig { iterations: 12_000, seed: 2, ..CampaignConfig::default() };
    let report = run_campaign(&profile, &cfg);
    assert!(report.findings.is_empty(), "unexpected finds: {:?}", report.counts);
}

#[test]
fn campaigns_are_deterministic() {
    let cfg = CampaignConfig { iterations: 4_000, seed: 2, ..CampaignConfig::default() };
    let a = run_campaign(&CoreProfile::x3like(), &cfg);
    let b = run_campaign(&CoreProfile::x3like(), &cfg);
    assert_eq!(a.counts, b.counts);
    let la: Vec<&str> = a.findings.iter().map(|f| f.listing.as_str()).collect();
    let lb: Vec<&str> = b.findings.iter().map(|f| f.listing.as_str()).collect();
    assert_eq!(la, lb);
}

#[test]
fn minimized_findings_stay_minimal() {
    // Every reported find must lose its signature when any single
    // instruction is removed.
    let cfg = CampaignConfig { iterations: 12_000, seed: 1, ..CampaignConfig::default() };
    let profile = CoreProfile::a715like();
    let ctx = ctx_for(1);
    let report = run_campaign(&profile, &cfg);
    assert!(!report.findings.is_empty());
    for finding in &report.findings {
        // Rebuild the block from the reported program (skeleton is two
        // instructions plus trailing halt).
        let ins = &finding.program.instructions;
        let block: Vec<I> = ins[2..ins.len() - 1].to_vec();
        assert_eq!(block.len(), finding.block_len);
        for skip in 0..block.len() {
            let mut shorter = block.clone();
            shorter.remove(skip);
            let case = TestCase::new(shorter);
            let unchanged = execute_differential(
                &profile,
                &ctx,
                &case,
                FUZZ_SECRET_TAG,
                FUZZ_WRONG_TAG,
                cfg.pairs,
            ) == Some(finding.signature)
                && execute_differential(
                    &profile,
                    &ctx,
                    &case,
                    FUZZ_SECRET_TAG,
                    FUZZ_SECRET_TAG,
                    cfg.pairs,
                )
                .is_none();
            assert!(!unchanged, "removable instruction {skip} in:\n{}", finding.listing);
        }
    }
}
