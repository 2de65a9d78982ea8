//! The mutation campaign: seed corpus, walk, minimization, dedup,
//! reporting.

use super::diff::{classify, execute_differential, GadgetFamily};
use super::{
    canonical_listing, mutate, FuzzContext, TestCase, FUZZ_SECRET_TAG, FUZZ_WRONG_TAG,
};
use crate::isa::{Instruction as I, Program};
use crate::rng;
use crate::speccore::CoreProfile;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Campaign knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Trial pairs per differential.
    pub pairs: usize,
    /// Restart the walk from the seed corpus this often.
    pub restart_interval: usize,
    pub max_block: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            iterations: 50_000,
            seed: 0,
            pairs: 12,
            restart_interval: 500,
            max_block: 64,
        }
    }
}

/// One deduplicated, minimized find.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    /// Iteration the raw candidate appeared at.
    pub iteration: usize,
    pub family: GadgetFamily,
    /// OR of per-pair probe-mask XORs.
    pub signature: u64,
    pub block_len: usize,
    /// Register-normalized block listing (dedup key).
    pub listing: String,
    /// The full minimized program (skeleton included).
    pub program: Program,
}

/// Find counts by family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub v1: usize,
    pub v2: usize,
    pub unknown: usize,
}

/// Result of a campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub profile: String,
    pub seed: u64,
    pub iterations: usize,
    /// Differentials that executed without training faults.
    pub executed: usize,
    pub counts: FamilyCounts,
    pub findings: Vec<Finding>,
}

/// The corpus the walk restarts from: the bare skeleton plus six
/// one-instruction blocks covering each access idiom.
pub fn seed_corpus(ctx: &FuzzContext) -> Vec<TestCase> {
    let s = &ctx.scratch;
    let p = &ctx.pool;
    vec![
        TestCase::new(vec![]),
        TestCase::new(vec![I::Ldr { dst: s[0], addr: ctx.guess }]),
        TestCase::new(vec![I::Ldr { dst: s[0], addr: p[0] }]),
        TestCase::new(vec![I::Str { src: p[1], addr: ctx.guess }]),
        TestCase::new(vec![I::Str { src: p[1], addr: p[0] }]),
        TestCase::new(vec![I::Orr { dst: s[1], a: s[1], b: s[1] }]),
        TestCase::new(vec![I::Eor { dst: s[2], a: s[0], b: p[0] }]),
    ]
}

/// A candidate is a find when the wrong-tag differential shows a
/// signature and the equal-tag control shows none.
fn confirm(
    profile: &CoreProfile,
    ctx: &FuzzContext,
    case: &TestCase,
    pairs: usize,
) -> Option<u64> {
    let signature = execute_differential(profile, ctx, case, FUZZ_SECRET_TAG, FUZZ_WRONG_TAG, pairs)?;
    match execute_differential(profile, ctx, case, FUZZ_SECRET_TAG, FUZZ_SECRET_TAG, pairs) {
        None => Some(signature),
        Some(_) => None,
    }
}

/// Greedy reverse single-instruction removal preserving the exact
/// signature and the clean equal-tag control.
fn minimize(
    profile: &CoreProfile,
    ctx: &FuzzContext,
    mut case: TestCase,
    signature: u64,
    pairs: usize,
) -> TestCase {
    let mut i = case.block.len();
    while i > 0 {
        i -= 1;
        let mut candidate = case.clone();
        candidate.block.remove(i);
        if confirm(profile, ctx, &candidate, pairs) == Some(signature) {
            case = candidate;
        }
    }
    case
}

/// Run one fuzzing campaign.
pub fn run_campaign(profile: &CoreProfile, cfg: &CampaignConfig) -> CampaignReport {
    let ctx = FuzzContext::generate(&mut rng::stream(cfg.seed, 0));
    let mut walk_rng = rng::stream(cfg.seed, 1);
    let seeds = seed_corpus(&ctx);
    let mut seed_idx = 0usize;
    let mut current = seeds[seed_idx].clone();

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut findings: Vec<Finding> = Vec::new();
    let mut counts = FamilyCounts::default();
    let mut executed = 0usize;

    for iteration in 0..cfg.iterations {
        current = mutate(&current, &ctx, cfg.max_block, &mut walk_rng);
        let raw = execute_differential(
            profile,
            &ctx,
            &current,
            FUZZ_SECRET_TAG,
            FUZZ_WRONG_TAG,
            cfg.pairs,
        );
        executed += 1;
        let confirmed = raw.and_then(|signature| {
            match execute_differential(profile, &ctx, &current, FUZZ_SECRET_TAG, FUZZ_SECRET_TAG, cfg.pairs)
            {
                None => Some(signature),
                Some(_) => None,
            }
        });

        if let Some(signature) = confirmed {
            let minimized = minimize(profile, &ctx, current.clone(), signature, cfg.pairs);
            let listing = canonical_listing(&minimized, &ctx);
            if seen.insert(listing.clone()) {
                let family = classify(profile, &ctx, &minimized, cfg.pairs);
                match family {
                    GadgetFamily::V1Family => counts.v1 += 1,
                    GadgetFamily::V2Family => counts.v2 += 1,
                    GadgetFamily::Unknown => counts.unknown += 1,
                }
                findings.push(Finding {
                    iteration,
                    family,
                    signature,
                    block_len: minimized.block.len(),
                    listing,
                    program: minimized.program(&ctx),
                });
            }
            seed_idx = (seed_idx + 1) % seeds.len();
            current = seeds[seed_idx].clone();
        } else if (iteration + 1) % cfg.restart_interval == 0 {
            seed_idx = (seed_idx + 1) % seeds.len();
            current = seeds[seed_idx].clone();
        }
    }

    CampaignReport {
        profile: profile.name.clone(),
        seed: cfg.seed,
        iterations: cfg.iterations,
        executed,
        counts,
        findings,
    }
}
