//! Deterministic out-of-order core model.
//!
//! The simulator is cycle-approximate, not cycle-accurate: it models exactly
//! the ordering phenomena the tag-leak experiments depend on and nothing
//! else. The moving parts:
//!
//! - **Dispatch** is in-order, `dispatch_width` instructions per cycle, and
//!   never stalls. Instructions are grouped into dispatch groups; group
//!   membership (not data dependence) is what the wrong-path-event window
//!   and store-to-load-forward gating consult.
//! - **Issue** is data-driven: an instruction executes at the maximum of its
//!   dispatch cycle, its source-ready times, and the previous issue time.
//!   ALU results are ready one cycle after execute; load data is ready after
//!   the cache round trip plus a load-use cycle.
//! - **Speculation**: each conditional branch is predicted from a per-PC
//!   last-outcome table. A mispredicted branch opens a wrong-path region
//!   bounded by the branch's resolution time; any instruction that would
//!   execute at or after resolution triggers the squash, which restores
//!   registers and drops the store buffer but leaves cache fills, the
//!   confidence counter, and pending prefetches in place.
//! - **Tag checks** happen on every issued access. Committed faults are
//!   architectural (synchronous aborts or asynchronous deferred reports).
//!   Wrong-path faults are squashed, but each one close enough to the
//!   branch (within `wpe_window_cycles` dispatch groups) charges the
//!   speculation confidence budget; when the budget crosses zero the core
//!   engages fill suppression a fixed latency later, blocking speculative
//!   demand fills, store-ownership fills, and prefetch fills for the rest
//!   of the run. Data delivery is never blocked — only the cache side
//!   effect — which is precisely the leak the experiments measure.
//! - **Store-to-load forwarding**: speculative loads search the store
//!   buffer. On gated cores a same-dispatch-group forward must pass the
//!   load's own tag check first; a failed check blocks the forward and
//!   poisons the destination so dependents never issue.
//! - **Prefetcher** (when enabled): training records the committed access
//!   pattern; later runs walk that pattern and schedule the next load line
//!   `PREFETCH_LATENCY` cycles after each matching access. Prefetch fills
//!   honor suppression at their fire time.

mod run;
mod trace;

pub use trace::{ArchFault, Event, EventKind, ExecutionTrace, FaultKind, FillCause};

use crate::isa::{Program, NUM_REGS};
use crate::tagmem::{CacheModel, TaggedMemory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Cycles between the confidence counter crossing zero and fill
/// suppression taking effect.
pub const ENGAGE_LATENCY: u64 = 9;
/// Cycles between a pattern match and the prefetch fill it schedules.
pub const PREFETCH_LATENCY: u64 = 10;
/// Dynamic instruction budget per run.
pub const INSTRUCTION_LIMIT: usize = 100_000;

/// Tag-check fault delivery discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MteMode {
    /// Fault at the instruction; the run aborts there.
    Sync,
    /// The access completes; the fault is reported once at run end.
    Async,
}

/// Optional hardware countermeasures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mitigations {
    /// Forward store data without the gating tag check.
    pub always_forward_stlf: bool,
    /// Tag-check faults on the wrong path never charge confidence.
    pub ignore_tcf_for_speculation: bool,
}

/// Static description of a modeled core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreProfile {
    pub name: String,
    /// Instructions dispatched per cycle.
    pub dispatch_width: u32,
    /// Wrong-path faults this many dispatch groups past the branch (or
    /// more) no longer charge confidence.
    pub wpe_window_cycles: u64,
    /// Speculation confidence budget restored at trial boundaries.
    pub confidence_budget: i64,
    /// Wrong-path tag faults shrink speculation (big-core behavior).
    pub v1_shrink_enabled: bool,
    /// Same-group store-to-load forwards are tag-gated (little-core
    /// behavior).
    pub stlf_gating_enabled: bool,
    pub prefetcher_enabled: bool,
    pub mte_mode: MteMode,
    pub mitigations: Mitigations,
}

impl CoreProfile {
    /// Big out-of-order core: wide dispatch, confidence-budget speculation
    /// shrinkage, pattern prefetcher, no forward gating.
    pub fn x3like() -> Self {
        CoreProfile {
            name: "X3LIKE".to_string(),
            dispatch_width: 6,
            wpe_window_cycles: 5,
            confidence_budget: 12,
            v1_shrink_enabled: true,
            stlf_gating_enabled: false,
            prefetcher_enabled: true,
            mte_mode: MteMode::Sync,
            mitigations: Mitigations::default(),
        }
    }

    /// Mid-size core: narrower dispatch, tag-gated same-group forwarding,
    /// no confidence shrinkage, no pattern prefetcher.
    pub fn a715like() -> Self {
        CoreProfile {
            name: "A715LIKE".to_string(),
            dispatch_width: 5,
            wpe_window_cycles: 5,
            confidence_budget: 12,
            v1_shrink_enabled: false,
            stlf_gating_enabled: true,
            prefetcher_enabled: false,
            mte_mode: MteMode::Sync,
            mitigations: Mitigations::default(),
        }
    }

    /// Look up a profile by case-insensitive name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "x3like" => Some(Self::x3like()),
            "a715like" => Some(Self::a715like()),
            _ => None,
        }
    }
}

/// Speculation confidence carried across runs until explicitly reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculationState {
    /// Remaining confidence; suppression engages when this crosses zero.
    pub confidence: i64,
    /// Whether suppression engaged during the current run.
    pub suppressed: bool,
}

/// Per-PC last-outcome branch predictor. Unseen branches predict
/// not-taken.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPredictorState {
    last_outcome: BTreeMap<usize, bool>,
}

impl BranchPredictorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Predicted taken-ness for the branch at program index `pc`.
    pub fn predict(&self, pc: usize) -> bool {
        self.last_outcome.get(&pc).copied().unwrap_or(false)
    }

    pub fn update(&mut self, pc: usize, taken: bool) {
        self.last_outcome.insert(pc, taken);
    }
}

/// One element of a recorded access pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternElem {
    pub line: u64,
    pub is_load: bool,
}

/// Pattern captured from the last training repetition. The prefetcher
/// replays it during measured runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetcherState {
    pub pattern: Vec<PatternElem>,
}

/// Mutable machine context a run executes against.
#[derive(Debug, Clone)]
pub struct RunEnvironment {
    pub memory: TaggedMemory,
    pub cache: CacheModel,
    pub regs: [u64; NUM_REGS],
}

impl RunEnvironment {
    pub fn new(memory: TaggedMemory) -> Self {
        RunEnvironment { memory, cache: CacheModel::new(), regs: [0; NUM_REGS] }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    /// The run exceeded the dynamic instruction budget.
    #[error("dynamic instruction limit of {0} exceeded")]
    SimLimitExceeded(usize),
}

/// Training output: predictor and prefetcher state to replay, plus any
/// architectural faults the training runs raised.
#[derive(Debug, Clone)]
pub struct Training {
    pub predictor: BranchPredictorState,
    pub prefetcher: PrefetcherState,
    pub arch_faults: Vec<ArchFault>,
}

/// The simulator: a core profile plus speculation state that persists
/// across runs.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub profile: CoreProfile,
    spec: SpeculationState,
    /// Record the event stream (slower; off for bulk sweeps).
    pub record_events: bool,
}

impl Simulator {
    pub fn new(profile: CoreProfile) -> Self {
        let spec = SpeculationState { confidence: profile.confidence_budget, suppressed: false };
        Simulator { profile, spec, record_events: true }
    }

    pub fn speculation(&self) -> SpeculationState {
        self.spec
    }

    /// Restore full confidence and clear suppression.
    pub fn reset_speculation(&mut self) {
        self.spec.confidence = self.profile.confidence_budget;
        self.spec.suppressed = false;
    }

    /// Run `program` `repetitions` times architecturally (prefetch replay
    /// off), accumulating predictor state. The committed access pattern of
    /// the final repetition becomes the prefetcher pattern.
    pub fn train(
        &mut self,
        program: &Program,
        env: &mut RunEnvironment,
        repetitions: u32,
    ) -> Result<Training, SimError> {
        let mut predictor = BranchPredictorState::new();
        let mut pattern = Vec::new();
        let mut arch_faults = Vec::new();
        for rep in 0..repetitions {
            let record_pattern = rep + 1 == repetitions;
            let out = run::run_once(
                &self.profile,
                &mut self.spec,
                program,
                env,
                &mut predictor,
                &PrefetcherState::default(),
                run::Mode::Training { record_pattern },
                self.record_events,
            )?;
            arch_faults.extend(out.trace.arch_faults.iter().copied());
            if record_pattern {
                pattern = out.pattern;
            }
        }
        Ok(Training { predictor, prefetcher: PrefetcherState { pattern }, arch_faults })
    }

    /// Execute one measured run: prediction and prefetch replay active,
    /// wrong-path faults charging confidence.
    pub fn run(
        &mut self,
        program: &Program,
        env: &mut RunEnvironment,
        predictor: &mut BranchPredictorState,
        prefetcher: &PrefetcherState,
    ) -> Result<ExecutionTrace, SimError> {
        let out = run::run_once(
            &self.profile,
            &mut self.spec,
            program,
            env,
            predictor,
            prefetcher,
            run::Mode::Measure,
            self.record_events,
        )?;
        Ok(out.trace)
    }
}
