//! Differential execution and find classification.
//!
//! One *trial* mirrors the gadget harness protocol: train the candidate
//! architecturally (condition set, guess correctly tagged), flush the
//! probe region, evict the condition line, run once with the condition
//! clear and a chosen guess tag, then scan which probe lines are
//! resident. A differential interleaves trials with two guess tags on
//! one simulator — interleaving matters, because confidence depletion
//! spans trials — and ORs the per-pair XOR of probe masks.

use super::{FuzzContext, TestCase, FUZZ_COND_ADDR, FUZZ_GUESS_ADDR, FUZZ_SECRET_TAG, PROBE_BASE, PROBE_LEN};
use crate::isa::{Program, NUM_REGS};
use crate::rng;
use crate::speccore::{CoreProfile, EventKind, ExecutionTrace, RunEnvironment, Simulator};
use crate::tagmem::{CacheModel, TagCheck, TaggedMemory, TaggedPointer, LINE_SIZE};
use serde::{Deserialize, Serialize};

/// Family of a confirmed find.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GadgetFamily {
    /// Confidence-shrinkage: repeated wrong-path tag faults at the guess
    /// granule followed by a suppressed fill.
    V1Family,
    /// Forward-gating: a blocked store-to-load forward at the guess
    /// granule.
    V2Family,
    Unknown,
}

fn build_memory(ctx: &FuzzContext) -> TaggedMemory {
    let mut memory = TaggedMemory::new();
    memory.map_region(FUZZ_COND_ADDR, 16, 0);
    memory.map_region(FUZZ_GUESS_ADDR, 16, FUZZ_SECRET_TAG);
    memory.map_region(PROBE_BASE, PROBE_LEN, 0);
    // The guessed granule holds a probe pointer so dependent-access
    // idioms have somewhere meaningful to go.
    let _ = memory.store_u64(FUZZ_GUESS_ADDR, TaggedPointer::new(PROBE_BASE | (7 << 7), 0).raw());
    let _ = ctx; // layout is fixed; the context only affects registers
    memory
}

fn scan(cache: &CacheModel) -> u64 {
    let base_line = PROBE_BASE / LINE_SIZE;
    let mut mask = 0u64;
    for i in 0..(PROBE_LEN / LINE_SIZE) {
        if cache.present(base_line + i) {
            mask |= 1 << i;
        }
    }
    mask
}

fn install_regs(env: &mut RunEnvironment, ctx: &FuzzContext, guess_tag: u8) {
    env.regs = [0; NUM_REGS];
    for &(reg, value) in &ctx.init_regs {
        env.regs[reg.index()] = value;
    }
    env.regs[ctx.guess.index()] = TaggedPointer::new(FUZZ_GUESS_ADDR, guess_tag).raw();
}

/// One trial; `None` when training faults architecturally or a run
/// exceeds the simulation limit. Returns the probe mask and, when
/// requested, the measured run's trace.
fn trial(
    sim: &mut Simulator,
    env: &mut RunEnvironment,
    ctx: &FuzzContext,
    program: &Program,
    guess_tag: u8,
    record: bool,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Option<(u64, Option<ExecutionTrace>)> {
    env.memory.store_u64(FUZZ_COND_ADDR, 1)?;
    install_regs(env, ctx, FUZZ_SECRET_TAG);
    let mut training = sim.train(program, env, 3).ok()?;
    if !training.arch_faults.is_empty() {
        return None;
    }

    let base_line = PROBE_BASE / LINE_SIZE;
    for i in 0..(PROBE_LEN / LINE_SIZE) {
        env.cache.flush_line(base_line + i);
    }
    env.cache.evict(FUZZ_COND_ADDR / LINE_SIZE, 1.0, rng);

    env.memory.store_u64(FUZZ_COND_ADDR, 0)?;
    install_regs(env, ctx, guess_tag);
    sim.record_events = record;
    let trace = sim.run(program, env, &mut training.predictor, &training.prefetcher).ok()?;
    sim.record_events = false;
    if !trace.arch_faults.is_empty() {
        return None;
    }
    Some((scan(&env.cache), record.then_some(trace)))
}

/// Run `pairs` interleaved trial pairs with guess tags `tag_a`/`tag_b`
/// on one simulator and return the OR of per-pair probe-mask XORs.
/// `None` means no signal: a zero signature, a training fault, or an
/// invalid program.
pub fn execute_differential(
    profile: &CoreProfile,
    ctx: &FuzzContext,
    case: &TestCase,
    tag_a: u8,
    tag_b: u8,
    pairs: usize,
) -> Option<u64> {
    let program = case.program(ctx);
    if !program.is_valid() {
        return None;
    }
    let mut sim = Simulator::new(profile.clone());
    sim.record_events = false;
    let mut env = RunEnvironment::new(build_memory(ctx));
    let mut rng = rng::stream(0x_d1ff, 0);
    let mut signature = 0u64;
    for _ in 0..pairs {
        let (mask_a, _) = trial(&mut sim, &mut env, ctx, &program, tag_a, false, &mut rng)?;
        let (mask_b, _) = trial(&mut sim, &mut env, ctx, &program, tag_b, false, &mut rng)?;
        signature |= mask_a ^ mask_b;
    }
    (signature != 0).then_some(signature)
}

/// Tag-check events record the raw tagged pointer; compare physical
/// granule bases.
fn guess_granule(addr: u64) -> bool {
    TaggedPointer::from_raw(addr).addr() & !0xf == FUZZ_GUESS_ADDR
}

/// Classify a confirmed find by replaying wrong-tag trials with event
/// recording until one shows the leak mechanism.
pub fn classify(
    profile: &CoreProfile,
    ctx: &FuzzContext,
    case: &TestCase,
    pairs: usize,
) -> GadgetFamily {
    let program = case.program(ctx);
    let mut sim = Simulator::new(profile.clone());
    sim.record_events = false;
    let mut env = RunEnvironment::new(build_memory(ctx));
    let mut rng = rng::stream(0x_d1ff, 1);
    let mut verdict = GadgetFamily::Unknown;
    for _ in 0..pairs {
        let Some(_) = trial(&mut sim, &mut env, ctx, &program, FUZZ_SECRET_TAG, false, &mut rng)
        else {
            return GadgetFamily::Unknown;
        };
        let Some((_, Some(trace))) =
            trial(&mut sim, &mut env, ctx, &program, super::FUZZ_WRONG_TAG, true, &mut rng)
        else {
            return GadgetFamily::Unknown;
        };

        let mut wrong_path_faults = 0usize;
        let mut suppressed = false;
        for event in &trace.events {
            match event.kind {
                EventKind::StlfBlocked { addr } if guess_granule(addr) => {
                    return GadgetFamily::V2Family;
                }
                EventKind::TagCheckEvent { addr, result, speculative }
                    if speculative && result != TagCheck::Match && guess_granule(addr) =>
                {
                    wrong_path_faults += 1;
                }
                EventKind::FillSuppressed { .. } => suppressed = true,
                _ => {}
            }
        }
        if suppressed && wrong_path_faults >= 2 {
            verdict = GadgetFamily::V1Family;
        }
    }
    verdict
}
