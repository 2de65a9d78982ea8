//! Execution traces: per-run event streams plus retired state.

use crate::isa::NUM_REGS;
use crate::tagmem::TagCheck;
use serde::{Deserialize, Serialize};

/// Why a cache line was brought in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillCause {
    /// Demand load.
    Demand,
    /// Store ownership fill.
    Rfo,
    /// Pattern prefetcher.
    Prefetch,
}

/// Architectural fault class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    TagMismatch,
    Unmapped,
}

/// A fault that reached architectural state. `deferred` marks asynchronous
/// tag-check faults reported once at run end instead of at the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchFault {
    pub kind: FaultKind,
    /// Program index of the faulting instruction.
    pub index: usize,
    pub deferred: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// A tag check performed by an issued access.
    TagCheckEvent { addr: u64, result: TagCheck, speculative: bool },
    Fill { line: u64, cause: FillCause },
    /// A fill that suppression blocked.
    FillSuppressed { line: u64, cause: FillCause },
    /// Store-to-load forward delivered (tag check skipped).
    StlfForwarded { addr: u64, same_group: bool },
    /// Same-group gated forward blocked by the load's own tag check.
    StlfBlocked { addr: u64 },
    PrefetchScheduled { line: u64 },
    PrefetchCancelled,
    /// Confidence crossed zero; fills/prefetches suppressed from this cycle.
    SuppressionEngaged,
    /// Wrong path squashed; architectural state restored.
    Squash,
    ArchFaultRaised { kind: FaultKind, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub cycle: u64,
    pub kind: EventKind,
}

/// Full result of one simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Event stream in issue order (empty unless event recording is on).
    pub events: Vec<Event>,
    /// Retired register file.
    pub regs: [u64; NUM_REGS],
    /// Cycles elapsed (last completion time observed).
    pub cycles: u64,
    /// Faults that reached architectural state, in raise order.
    pub arch_faults: Vec<ArchFault>,
    /// Dynamic instructions processed (both paths).
    pub executed: usize,
}

impl ExecutionTrace {
    /// Speculative tag-check faults (MISMATCH or UNMAPPED) at `addr`.
    pub fn speculative_faults_at(&self, addr: u64) -> usize {
        self.events
            .iter()
            .filter(|e| {
                matches!(e.kind,
                    EventKind::TagCheckEvent { addr: a, result, speculative: true }
                        if a == addr && result != TagCheck::Match)
            })
            .count()
    }

    pub fn has_stlf_blocked(&self) -> bool {
        self.events.iter().any(|e| matches!(e.kind, EventKind::StlfBlocked { .. }))
    }

    pub fn fills_of_line(&self, line: u64) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Fill { line: l, .. } if l == line))
            .count()
    }

    /// Structured event log, one event per line: `cycle kind key=value...`.
    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let body = match e.kind {
                EventKind::TagCheckEvent { addr, result, speculative } => format!(
                    "tag_check addr={addr:#x} result={result:?} speculative={speculative}"
                ),
                EventKind::Fill { line, cause } => format!("fill line={line:#x} cause={cause:?}"),
                EventKind::FillSuppressed { line, cause } => {
                    format!("fill_suppressed line={line:#x} cause={cause:?}")
                }
                EventKind::StlfForwarded { addr, same_group } => {
                    format!("stlf_forwarded addr={addr:#x} same_group={same_group}")
                }
                EventKind::StlfBlocked { addr } => format!("stlf_blocked addr={addr:#x}"),
                EventKind::PrefetchScheduled { line } => {
                    format!("prefetch_scheduled line={line:#x}")
                }
                EventKind::PrefetchCancelled => "prefetch_cancelled".to_string(),
                EventKind::SuppressionEngaged => "suppression_engaged".to_string(),
                EventKind::Squash => "squash".to_string(),
                EventKind::ArchFaultRaised { kind, index } => {
                    format!("arch_fault kind={kind:?} index={index}")
                }
            };
            out.push_str(&format!("cycle={} {body}\n", e.cycle));
        }
        out
    }
}
