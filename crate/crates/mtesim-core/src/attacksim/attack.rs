//! The attack loops: use-after-free and linear-overflow tag bypasses.
//!
//! Both attacks share a shape: the attacker holds a pointer whose tag was
//! fixed in the past (a dangling pointer, or a forged neighbour pointer
//! derived from their own allocation's tag) and cycles allocator state until
//! the target memory carries a matching tag again. Every round consults an
//! *oracle* — the attacker's means of learning whether the tags line up
//! before committing to the corrupting store — and the final store is
//! executed as a committed two-instruction program on the pipeline model, so
//! "success" means exactly what it would mean on hardware: the write retired
//! with zero architectural tag faults.

use super::{HeapError, HeapModel, TagPolicy};
use crate::isa::{Instruction, Program, Reg};
use crate::speccore::{
    BranchPredictorState, CoreProfile, MteMode, PrefetcherState, RunEnvironment, SimError,
    Simulator,
};
use crate::tagmem::TaggedPointer;
use rand::Rng;
use thiserror::Error;

/// Value written by the corrupting store, recognisable when inspecting the
/// heap afterwards.
pub const CORRUPT_MARKER: u64 = 0x4141_4141_4141_4141;

/// How the attacker learns whether a candidate pointer currently matches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleModel {
    /// Ground truth: the attacker always knows whether the tags match.
    Perfect,
    /// One-sided noise: a true match is *detected* with probability
    /// `accuracy`, a mismatch is never mistaken for a match. This models a
    /// timing-style observation channel — noise can make a fast (matching)
    /// probe look slow, but nothing makes a faulting or uncached probe look
    /// like a clean hit.
    Noisy {
        /// Probability that a real tag match is recognised as one.
        accuracy: f64,
    },
    /// Run a committed probe load through the pipeline model and report a
    /// match iff it retires without a fault. Models an attacker who can
    /// survive and observe tag-check outcomes (e.g. via a fault handler or
    /// asynchronous fault-status reads).
    Simulated,
}

/// Knobs for a single attack run.
#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    /// Give up after this many allocator round-trips.
    pub max_retries: usize,
    /// Observation channel for the per-round tag probe.
    pub oracle: OracleModel,
    /// Tag-check mode the victim machine runs with.
    pub mte_mode: MteMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            max_retries: 256,
            oracle: OracleModel::Perfect,
            mte_mode: MteMode::Sync,
        }
    }
}

/// Result of one attack run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackOutcome {
    /// The corrupting store retired with zero architectural faults.
    pub success: bool,
    /// Allocator round-trips performed before the corrupting store (the
    /// use-after-free counts reallocations of the slot, the overflow counts
    /// victim respawns that failed to match).
    pub retries: usize,
    /// Architectural faults raised by probe accesses along the way (only the
    /// simulated oracle performs real probe accesses).
    pub probe_faults: usize,
    /// Architectural faults raised by the final corrupting store, if it ran.
    pub corrupt_faults: usize,
}

/// Failure modes of an attack run, as opposed to an unsuccessful attack.
#[derive(Debug, Error)]
pub enum AttackError {
    /// The policy makes the attack structurally impossible, no amount of
    /// retries helps (e.g. overflow between parity-segregated slots).
    #[error("tag classes of attacker and victim slots never intersect")]
    DeterministicallyImpossible,
    /// The heap model rejected an operation the loop relies on.
    #[error(transparent)]
    Heap(#[from] HeapError),
    /// The pipeline model rejected the corrupting program.
    #[error(transparent)]
    Sim(#[from] SimError),
}

const R_ADDR: Reg = Reg(0);
const R_VAL: Reg = Reg(1);

/// Run a committed single-access program (a store, or a load for probes)
/// against the heap's memory and report how many architectural faults it
/// raised. The heap memory is threaded through the pipeline environment so a
/// successful (or async-completed) store really lands.
fn committed_access(
    heap: &mut HeapModel,
    ptr: TaggedPointer,
    store: bool,
    mte_mode: MteMode,
) -> Result<usize, AttackError> {
    let access = if store {
        Instruction::Str { src: R_VAL, addr: R_ADDR }
    } else {
        Instruction::Ldr { dst: R_VAL, addr: R_ADDR }
    };
    let program = Program::new(vec![access, Instruction::Halt]);

    let mut profile = CoreProfile::x3like();
    profile.mte_mode = mte_mode;
    let mut sim = Simulator::new(profile);
    sim.record_events = false;

    let mut env = RunEnvironment::new(heap.take_memory());
    env.regs[R_ADDR.index()] = ptr.raw();
    env.regs[R_VAL.index()] = CORRUPT_MARKER;

    let mut predictor = BranchPredictorState::new();
    let outcome = sim.run(&program, &mut env, &mut predictor, &PrefetcherState::default());
    heap.restore_memory(env.memory);
    Ok(outcome?.arch_faults.len())
}

/// Execute the corrupting store through `ptr` as a committed program and
/// return the number of architectural faults it raised. Zero faults means
/// the write landed silently; in async mode a mismatched store both lands
/// and faults, in sync mode it faults without landing.
pub fn corrupting_store(
    heap: &mut HeapModel,
    ptr: TaggedPointer,
    mte_mode: MteMode,
) -> Result<usize, AttackError> {
    committed_access(heap, ptr, true, mte_mode)
}

/// One oracle consultation: does the attacker believe `ptr` currently
/// matches the target slot's tag?
fn consult_oracle(
    heap: &mut HeapModel,
    ptr: TaggedPointer,
    truth: bool,
    cfg: &AttackConfig,
    probe_faults: &mut usize,
    rng: &mut impl Rng,
) -> Result<bool, AttackError> {
    Ok(match cfg.oracle {
        OracleModel::Perfect => truth,
        OracleModel::Noisy { accuracy } => truth && rng.gen_bool(accuracy),
        OracleModel::Simulated => {
            let faults = committed_access(heap, ptr, false, cfg.mte_mode)?;
            *probe_faults += faults;
            faults == 0
        }
    })
}

/// Use-after-free bypass starting from an already-dangling pointer.
///
/// The loop first checks the slot as it stands (a dangling pointer that
/// still matches needs no reallocation at all), then cycles the slot through
/// realloc/release rounds until the release-time tag comes back around to
/// the dangling pointer's tag. `retries` counts the reallocations.
pub fn bypass_uaf_from(
    heap: &mut HeapModel,
    dangling: TaggedPointer,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<AttackOutcome, AttackError> {
    let slot = ((dangling.addr() - super::HEAP_BASE) / super::SLOT_SIZE) as usize;
    let mut probe_faults = 0;

    // Check before any reallocation: the stale pointer may still be valid.
    let truth = heap.slot_tag(slot) == dangling.tag();
    if consult_oracle(heap, dangling, truth, cfg, &mut probe_faults, rng)? {
        let corrupt_faults = committed_access(heap, dangling, true, cfg.mte_mode)?;
        return Ok(AttackOutcome {
            success: corrupt_faults == 0,
            retries: 0,
            probe_faults,
            corrupt_faults,
        });
    }

    for retries in 1..=cfg.max_retries {
        let obj = heap.alloc()?;
        debug_assert_eq!(obj.addr(), dangling.addr(), "slot must be the lowest free");
        let truth = heap.slot_tag(slot) == dangling.tag();
        if consult_oracle(heap, dangling, truth, cfg, &mut probe_faults, rng)? {
            let corrupt_faults = committed_access(heap, dangling, true, cfg.mte_mode)?;
            return Ok(AttackOutcome {
                success: corrupt_faults == 0,
                retries,
                probe_faults,
                corrupt_faults,
            });
        }
        heap.free(obj, rng)?;
    }

    Ok(AttackOutcome {
        success: false,
        retries: cfg.max_retries,
        probe_faults,
        corrupt_faults: 0,
    })
}

/// Full use-after-free bypass: allocate a victim, let it dangle, then grind
/// the allocator until the slot's tag matches the dangling pointer again.
pub fn bypass_uaf(
    heap: &mut HeapModel,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<AttackOutcome, AttackError> {
    let victim = heap.alloc()?;
    let dangling = victim;
    heap.free(victim, rng)?;
    bypass_uaf_from(heap, dangling, cfg, rng)
}

/// Linear-overflow bypass: the attacker owns a slot and forges a pointer to
/// the adjacent victim slot reusing their own tag, then churns the victim
/// allocation until a fresh object lands there with a matching tag.
///
/// `retries` counts the respawns that failed to match. When the policy's tag
/// classes for the two slots never intersect the attack is reported as
/// impossible rather than retried forever.
pub fn bypass_overflow(
    heap: &mut HeapModel,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<AttackOutcome, AttackError> {
    let policy = heap.policy();
    let attacker_class = policy.tag_class(0);
    let victim_class = policy.tag_class(1);
    if !attacker_class.iter().any(|t| victim_class.contains(t)) {
        return Err(AttackError::DeterministicallyImpossible);
    }

    let attacker = heap.alloc()?;
    let _victim = heap.alloc()?;
    let forged = TaggedPointer::new(attacker.addr() + super::SLOT_SIZE, attacker.tag());

    let mut probe_faults = 0;
    let mut retries = 0;
    while retries <= cfg.max_retries {
        let truth = heap.slot_tag(1) == forged.tag();
        if consult_oracle(heap, forged, truth, cfg, &mut probe_faults, rng)? {
            let corrupt_faults = committed_access(heap, forged, true, cfg.mte_mode)?;
            return Ok(AttackOutcome {
                success: corrupt_faults == 0,
                retries,
                probe_faults,
                corrupt_faults,
            });
        }
        retries += 1;
        heap.respawn(1, rng)?;
    }

    Ok(AttackOutcome {
        success: false,
        retries: cfg.max_retries,
        probe_faults,
        corrupt_faults: 0,
    })
}

/// Aggregate statistics over repeated attack runs on fresh heaps.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AttackStats {
    /// Policy label, e.g. `scudo` or `partition_alloc`.
    pub policy: String,
    /// `uaf` or `overflow`.
    pub attack: String,
    /// Seed the campaign's per-round RNG streams derive from.
    pub seed: u64,
    /// Number of independent runs.
    pub rounds: usize,
    /// Runs whose corrupting store retired cleanly.
    pub successes: usize,
    /// `successes / rounds`.
    pub success_rate: f64,
    /// Mean retries across all runs (failed runs contribute the retry cap).
    pub mean_retries: f64,
    /// Total architectural faults across every run, probes and corrupting
    /// stores combined. Zero for a perfect-oracle attacker: the attack is
    /// invisible to the tag machinery.
    pub total_faults: usize,
}

fn campaign(
    policy: TagPolicy,
    attack: &str,
    cfg: &AttackConfig,
    rounds: usize,
    seed: u64,
) -> Result<AttackStats, AttackError> {
    let mut successes = 0;
    let mut retries_sum = 0usize;
    let mut total_faults = 0;
    for round in 0..rounds {
        let mut rng = crate::rng::stream(seed, round as u64);
        let mut heap = HeapModel::new(policy, 2, &mut rng);
        let out = match attack {
            "uaf" => bypass_uaf(&mut heap, cfg, &mut rng)?,
            _ => bypass_overflow(&mut heap, cfg, &mut rng)?,
        };
        successes += out.success as usize;
        retries_sum += out.retries;
        total_faults += out.probe_faults + out.corrupt_faults;
    }
    Ok(AttackStats {
        policy: policy.label().to_string(),
        attack: attack.to_string(),
        seed,
        rounds,
        successes,
        success_rate: successes as f64 / rounds.max(1) as f64,
        mean_retries: retries_sum as f64 / rounds.max(1) as f64,
        total_faults,
    })
}

/// Repeated use-after-free runs; each run uses a fresh heap and RNG stream
/// `seed`/`round`.
pub fn uaf_campaign(
    policy: TagPolicy,
    cfg: &AttackConfig,
    rounds: usize,
    seed: u64,
) -> Result<AttackStats, AttackError> {
    campaign(policy, "uaf", cfg, rounds, seed)
}

/// Repeated overflow runs; surfaces [`AttackError::DeterministicallyImpossible`]
/// immediately for parity-segregated policies.
pub fn overflow_campaign(
    policy: TagPolicy,
    cfg: &AttackConfig,
    rounds: usize,
    seed: u64,
) -> Result<AttackStats, AttackError> {
    campaign(policy, "overflow", cfg, rounds, seed)
}
