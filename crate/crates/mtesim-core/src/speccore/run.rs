//! The execution engine: one pass of a program through the modeled core.
//!
//! State is tracked per run: a monotone issue clock (`last_exec`), per-
//! register ready times, a poison mask for values that never arrive
//! (blocked forwards, unmapped loads), an optional wrong-path context, the
//! speculative store buffer, and the prefetch replay cursor. Architectural
//! register values are updated eagerly at issue; ready times alone carry
//! the timing, which keeps the engine single-pass.

use super::trace::{ArchFault, Event, EventKind, ExecutionTrace, FaultKind, FillCause};
use super::{
    BranchPredictorState, CoreProfile, PatternElem, PrefetcherState, RunEnvironment, SimError,
    SpeculationState, ENGAGE_LATENCY, INSTRUCTION_LIMIT, PREFETCH_LATENCY,
};
use crate::isa::{Instruction, Program, NUM_REGS};
use crate::tagmem::{CacheModel, TagCheck, TaggedPointer, LINE_SIZE};

/// Extra cycle between load completion and dependent issue.
const LOAD_USE: u64 = 1;

/// How a run participates in the trial protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Mode {
    /// Architectural warm-up: prefetch replay off, optionally recording
    /// the committed access pattern.
    Training { record_pattern: bool },
    /// Measured run: replay and confidence charging active.
    Measure,
}

pub(super) struct RunOutput {
    pub trace: ExecutionTrace,
    /// Committed access pattern (training with recording only).
    pub pattern: Vec<PatternElem>,
}

/// Saved architectural state for wrong-path recovery.
struct SpecCtx {
    branch_group: u64,
    resolution: u64,
    committed_pc: usize,
    saved_regs: [u64; NUM_REGS],
    saved_ready: [u64; NUM_REGS],
    saved_poisoned: [bool; NUM_REGS],
}

struct SpecStore {
    addr: u64,
    value: u64,
    group: u64,
}

struct PendingPrefetch {
    line: u64,
    fire: u64,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn run_once(
    profile: &CoreProfile,
    spec: &mut SpeculationState,
    program: &Program,
    env: &mut RunEnvironment,
    predictor: &mut BranchPredictorState,
    prefetcher: &PrefetcherState,
    mode: Mode,
    record_events: bool,
) -> Result<RunOutput, SimError> {
    let width = profile.dispatch_width as u64;
    let training = matches!(mode, Mode::Training { .. });
    let record_pattern = matches!(mode, Mode::Training { record_pattern: true });

    let mut regs = env.regs;
    let mut ready = [0u64; NUM_REGS];
    let mut poisoned = [false; NUM_REGS];
    let mut pc = program.entry;
    // Dispatch groups: group = seg_base + seg_idx / width. Segments break
    // at predicted-taken branches and at squash recovery.
    let mut seg_base = 0u64;
    let mut seg_idx = 0u64;
    let mut last_exec = 0u64;
    let mut executed = 0usize;
    let mut end_time = 0u64;

    let mut spec_ctx: Option<SpecCtx> = None;
    let mut store_buf: Vec<SpecStore> = Vec::new();

    // Wrong-path fault accounting for this run.
    let mut trial_faults = 0u32;
    let mut engage: Option<u64> = None;
    let mut crossed = false;

    // Prefetch replay.
    let mut pending: Vec<PendingPrefetch> = Vec::new();
    let mut cursor = 0usize;
    let mut diverged = false;

    let mut pattern: Vec<PatternElem> = Vec::new();
    let mut events: Vec<Event> = Vec::new();
    let mut arch_faults: Vec<ArchFault> = Vec::new();
    let mut deferred: Vec<usize> = Vec::new();

    macro_rules! emit {
        ($cycle:expr, $kind:expr) => {
            if record_events {
                events.push(Event { cycle: $cycle, kind: $kind });
            }
        };
    }

    loop {
        executed += 1;
        if executed > INSTRUCTION_LIMIT {
            return Err(SimError::SimLimitExceeded(INSTRUCTION_LIMIT));
        }

        // Running off the end: implicit halt on the committed path, squash
        // on the wrong path.
        if pc >= program.len() {
            if let Some(ctx) = spec_ctx.take() {
                squash(
                    ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                    &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                    record_events, &mut events,
                );
                continue;
            }
            break;
        }

        let instr = program.instructions[pc];
        let group = seg_base + seg_idx / width;

        // An instruction with a poisoned source never issues; its
        // destination is poisoned in turn. Dispatch still consumes a slot.
        if instr.sources().iter().any(|r| poisoned[r.index()]) {
            if let Some(dst) = instr.dest() {
                poisoned[dst.index()] = true;
            }
            // A branch whose condition never arrives cannot resolve; on
            // the wrong path that ends speculation immediately.
            if matches!(instr, Instruction::Beqz { .. }) {
                if let Some(ctx) = spec_ctx.take() {
                    squash(
                        ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                        &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                        record_events, &mut events,
                    );
                    continue;
                }
            }
            pc += 1;
            seg_idx += 1;
            continue;
        }

        match instr {
            Instruction::Nop => {
                let exec = group.max(last_exec);
                if squash_if_resolved(
                    exec, &mut spec_ctx, &mut regs, &mut ready, &mut poisoned, &mut pc,
                    &mut seg_base, &mut seg_idx, &mut last_exec, &mut store_buf,
                    &mut end_time, record_events, &mut events,
                ) {
                    continue;
                }
                last_exec = exec;
                end_time = end_time.max(exec);
                pc += 1;
                seg_idx += 1;
            }

            Instruction::Isb | Instruction::Sb => {
                // Barriers halt speculation: on the wrong path they behave
                // like an immediate resolution.
                if let Some(ctx) = spec_ctx.take() {
                    squash(
                        ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                        &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                        record_events, &mut events,
                    );
                    continue;
                }
                let exec = group.max(last_exec);
                last_exec = exec;
                end_time = end_time.max(exec);
                pc += 1;
                seg_idx += 1;
            }

            Instruction::Halt => {
                if let Some(ctx) = spec_ctx.take() {
                    squash(
                        ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                        &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                        record_events, &mut events,
                    );
                    continue;
                }
                let exec = group.max(last_exec);
                end_time = end_time.max(exec);
                break;
            }

            Instruction::Mov { dst, imm } => {
                let exec = group.max(last_exec);
                if squash_if_resolved(
                    exec, &mut spec_ctx, &mut regs, &mut ready, &mut poisoned, &mut pc,
                    &mut seg_base, &mut seg_idx, &mut last_exec, &mut store_buf,
                    &mut end_time, record_events, &mut events,
                ) {
                    continue;
                }
                last_exec = exec;
                regs[dst.index()] = imm;
                ready[dst.index()] = exec + 1;
                poisoned[dst.index()] = false;
                end_time = end_time.max(exec + 1);
                pc += 1;
                seg_idx += 1;
            }

            Instruction::Orr { dst, a, b } | Instruction::Eor { dst, a, b } => {
                let exec = group
                    .max(ready[a.index()])
                    .max(ready[b.index()])
                    .max(last_exec);
                if squash_if_resolved(
                    exec, &mut spec_ctx, &mut regs, &mut ready, &mut poisoned, &mut pc,
                    &mut seg_base, &mut seg_idx, &mut last_exec, &mut store_buf,
                    &mut end_time, record_events, &mut events,
                ) {
                    continue;
                }
                last_exec = exec;
                let (va, vb) = (regs[a.index()], regs[b.index()]);
                regs[dst.index()] = if matches!(instr, Instruction::Orr { .. }) {
                    va | vb
                } else {
                    va ^ vb
                };
                ready[dst.index()] = exec + 1;
                poisoned[dst.index()] = false;
                end_time = end_time.max(exec + 1);
                pc += 1;
                seg_idx += 1;
            }

            Instruction::Beqz { cond, target } => {
                // A branch inside the wrong path ends the modeled
                // speculation region.
                if let Some(ctx) = spec_ctx.take() {
                    squash(
                        ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                        &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                        record_events, &mut events,
                    );
                    continue;
                }
                let exec = group.max(last_exec);
                last_exec = exec;
                let resolution = exec.max(ready[cond.index()]);
                end_time = end_time.max(resolution);
                let actual_taken = regs[cond.index()] == 0;
                let predicted_taken = predictor.predict(pc);
                predictor.update(pc, actual_taken);

                let (taken_pc, fall_pc) = (target, pc + 1);
                if predicted_taken == actual_taken {
                    if actual_taken {
                        pc = taken_pc;
                        seg_base = group + 1;
                        seg_idx = 0;
                    } else {
                        pc = fall_pc;
                        seg_idx += 1;
                    }
                } else {
                    // Misprediction: follow the predicted path until an
                    // instruction reaches the resolution time.
                    spec_ctx = Some(SpecCtx {
                        branch_group: group,
                        resolution,
                        committed_pc: if actual_taken { taken_pc } else { fall_pc },
                        saved_regs: regs,
                        saved_ready: ready,
                        saved_poisoned: poisoned,
                    });
                    if predicted_taken {
                        pc = taken_pc;
                        seg_base = group + 1;
                        seg_idx = 0;
                    } else {
                        pc = fall_pc;
                        seg_idx += 1;
                    }
                }
            }

            Instruction::Jmp { target } => {
                if let Some(ctx) = spec_ctx.take() {
                    squash(
                        ctx, &mut regs, &mut ready, &mut poisoned, &mut pc, &mut seg_base,
                        &mut seg_idx, &mut last_exec, &mut store_buf, &mut end_time,
                        record_events, &mut events,
                    );
                    continue;
                }
                let exec = group.max(last_exec);
                last_exec = exec;
                end_time = end_time.max(exec);
                pc = target;
                seg_base = group + 1;
                seg_idx = 0;
            }

            Instruction::Ldr { dst, addr } => {
                let exec = group.max(ready[addr.index()]).max(last_exec);
                if squash_if_resolved(
                    exec, &mut spec_ctx, &mut regs, &mut ready, &mut poisoned, &mut pc,
                    &mut seg_base, &mut seg_idx, &mut last_exec, &mut store_buf,
                    &mut end_time, record_events, &mut events,
                ) {
                    continue;
                }
                last_exec = exec;
                drain_prefetches(
                    exec, &mut pending, &mut env.cache, engage, record_events, &mut events,
                    &mut end_time,
                );

                let ptr = TaggedPointer::from_raw(regs[addr.index()]);
                let access_addr = ptr.addr() & !7;
                let line = access_addr / LINE_SIZE;
                let speculative = spec_ctx.is_some();

                if speculative {
                    let forwarded = store_buf.iter().rev().find(|s| s.addr == access_addr);
                    if let Some(entry) = forwarded {
                        let same_group = entry.group == group;
                        let gated = profile.stlf_gating_enabled
                            && !profile.mitigations.always_forward_stlf
                            && same_group;
                        if gated {
                            let check = env.memory.check_tag(ptr);
                            emit!(exec, EventKind::TagCheckEvent {
                                addr: regs[addr.index()],
                                result: check,
                                speculative: true
                            });
                            if check == TagCheck::Match {
                                regs[dst.index()] = entry.value;
                                ready[dst.index()] = exec + 1;
                                poisoned[dst.index()] = false;
                                emit!(exec, EventKind::StlfForwarded {
                                    addr: access_addr,
                                    same_group: true
                                });
                            } else {
                                poisoned[dst.index()] = true;
                                emit!(exec, EventKind::StlfBlocked { addr: access_addr });
                                wrong_path_fault(
                                    profile, spec, &spec_ctx, group, exec, &mut trial_faults,
                                    &mut crossed, &mut engage, record_events, &mut events,
                                );
                            }
                        } else {
                            regs[dst.index()] = entry.value;
                            ready[dst.index()] = exec + 1;
                            poisoned[dst.index()] = false;
                            emit!(exec, EventKind::StlfForwarded {
                                addr: access_addr,
                                same_group
                            });
                        }
                        end_time = end_time.max(exec + 1);
                    } else {
                        let check = env.memory.check_tag(ptr);
                        emit!(exec, EventKind::TagCheckEvent {
                            addr: regs[addr.index()],
                            result: check,
                            speculative: true
                        });
                        match check {
                            TagCheck::Match | TagCheck::Mismatch => {
                                if check == TagCheck::Mismatch {
                                    wrong_path_fault(
                                        profile, spec, &spec_ctx, group, exec,
                                        &mut trial_faults, &mut crossed, &mut engage,
                                        record_events, &mut events,
                                    );
                                }
                                let latency = fill_for_access(
                                    line, exec, FillCause::Demand, &mut env.cache, engage,
                                    record_events, &mut events,
                                );
                                regs[dst.index()] =
                                    env.memory.load_u64(access_addr).unwrap_or(0);
                                ready[dst.index()] = exec + latency + LOAD_USE;
                                poisoned[dst.index()] = false;
                                end_time = end_time.max(ready[dst.index()]);
                            }
                            TagCheck::Unmapped => {
                                wrong_path_fault(
                                    profile, spec, &spec_ctx, group, exec, &mut trial_faults,
                                    &mut crossed, &mut engage, record_events, &mut events,
                                );
                                poisoned[dst.index()] = true;
                            }
                        }
                        advance_prefetcher(
                            profile, prefetcher, training, line, exec, &mut cursor,
                            &mut diverged, &mut pending, record_events, &mut events,
                        );
                    }
                } else {
                    let check = env.memory.check_tag(ptr);
                    emit!(exec, EventKind::TagCheckEvent {
                        addr: regs[addr.index()],
                        result: check,
                        speculative: false
                    });
                    match check {
                        TagCheck::Match => {
                            let latency = committed_fill(
                                line, exec, FillCause::Demand, &mut env.cache, record_events,
                                &mut events,
                            );
                            regs[dst.index()] = env.memory.load_u64(access_addr).unwrap_or(0);
                            ready[dst.index()] = exec + latency + LOAD_USE;
                            poisoned[dst.index()] = false;
                            end_time = end_time.max(ready[dst.index()]);
                        }
                        TagCheck::Mismatch => match profile.mte_mode {
                            super::MteMode::Sync => {
                                emit!(exec, EventKind::ArchFaultRaised {
                                    kind: FaultKind::TagMismatch,
                                    index: pc
                                });
                                arch_faults.push(ArchFault {
                                    kind: FaultKind::TagMismatch,
                                    index: pc,
                                    deferred: false,
                                });
                                end_time = end_time.max(exec);
                                env.regs = regs;
                                return Ok(finish(
                                    spec, profile, env, events, arch_faults, deferred, regs,
                                    end_time, executed, pattern, pending, engage,
                                    record_events,
                                ));
                            }
                            super::MteMode::Async => {
                                deferred.push(pc);
                                let latency = committed_fill(
                                    line, exec, FillCause::Demand, &mut env.cache,
                                    record_events, &mut events,
                                );
                                regs[dst.index()] =
                                    env.memory.load_u64(access_addr).unwrap_or(0);
                                ready[dst.index()] = exec + latency + LOAD_USE;
                                poisoned[dst.index()] = false;
                                end_time = end_time.max(ready[dst.index()]);
                            }
                        },
                        TagCheck::Unmapped => {
                            emit!(exec, EventKind::ArchFaultRaised {
                                kind: FaultKind::Unmapped,
                                index: pc
                            });
                            arch_faults.push(ArchFault {
                                kind: FaultKind::Unmapped,
                                index: pc,
                                deferred: false,
                            });
                            end_time = end_time.max(exec);
                            env.regs = regs;
                            return Ok(finish(
                                spec, profile, env, events, arch_faults, deferred, regs,
                                end_time, executed, pattern, pending, engage, record_events,
                            ));
                        }
                    }
                    if record_pattern && check != TagCheck::Unmapped {
                        push_pattern(&mut pattern, line, true);
                    }
                    advance_prefetcher(
                        profile, prefetcher, training, line, exec, &mut cursor, &mut diverged,
                        &mut pending, record_events, &mut events,
                    );
                }
                pc += 1;
                seg_idx += 1;
            }

            Instruction::Str { src, addr } => {
                let exec = group
                    .max(ready[addr.index()])
                    .max(ready[src.index()])
                    .max(last_exec);
                if squash_if_resolved(
                    exec, &mut spec_ctx, &mut regs, &mut ready, &mut poisoned, &mut pc,
                    &mut seg_base, &mut seg_idx, &mut last_exec, &mut store_buf,
                    &mut end_time, record_events, &mut events,
                ) {
                    continue;
                }
                last_exec = exec;
                drain_prefetches(
                    exec, &mut pending, &mut env.cache, engage, record_events, &mut events,
                    &mut end_time,
                );

                let ptr = TaggedPointer::from_raw(regs[addr.index()]);
                let access_addr = ptr.addr() & !7;
                let line = access_addr / LINE_SIZE;
                let speculative = spec_ctx.is_some();
                let check = env.memory.check_tag(ptr);
                emit!(exec, EventKind::TagCheckEvent {
                    addr: regs[addr.index()],
                    result: check,
                    speculative
                });

                if speculative {
                    store_buf.push(SpecStore { addr: access_addr, value: regs[src.index()], group });
                    match check {
                        TagCheck::Match => {
                            fill_for_access(
                                line, exec, FillCause::Rfo, &mut env.cache, engage,
                                record_events, &mut events,
                            );
                        }
                        TagCheck::Mismatch | TagCheck::Unmapped => {
                            wrong_path_fault(
                                profile, spec, &spec_ctx, group, exec, &mut trial_faults,
                                &mut crossed, &mut engage, record_events, &mut events,
                            );
                        }
                    }
                    end_time = end_time.max(exec);
                    advance_prefetcher(
                        profile, prefetcher, training, line, exec, &mut cursor, &mut diverged,
                        &mut pending, record_events, &mut events,
                    );
                } else {
                    match check {
                        TagCheck::Match => {
                            committed_fill(
                                line, exec, FillCause::Rfo, &mut env.cache, record_events,
                                &mut events,
                            );
                            env.memory.store_u64(access_addr, regs[src.index()]);
                            end_time = end_time.max(exec);
                        }
                        TagCheck::Mismatch => match profile.mte_mode {
                            super::MteMode::Sync => {
                                emit!(exec, EventKind::ArchFaultRaised {
                                    kind: FaultKind::TagMismatch,
                                    index: pc
                                });
                                arch_faults.push(ArchFault {
                                    kind: FaultKind::TagMismatch,
                                    index: pc,
                                    deferred: false,
                                });
                                end_time = end_time.max(exec);
                                env.regs = regs;
                                return Ok(finish(
                                    spec, profile, env, events, arch_faults, deferred, regs,
                                    end_time, executed, pattern, pending, engage,
                                    record_events,
                                ));
                            }
                            super::MteMode::Async => {
                                deferred.push(pc);
                                committed_fill(
                                    line, exec, FillCause::Rfo, &mut env.cache, record_events,
                                    &mut events,
                                );
                                env.memory.store_u64(access_addr, regs[src.index()]);
                                end_time = end_time.max(exec);
                            }
                        },
                        TagCheck::Unmapped => {
                            emit!(exec, EventKind::ArchFaultRaised {
                                kind: FaultKind::Unmapped,
                                index: pc
                            });
                            arch_faults.push(ArchFault {
                                kind: FaultKind::Unmapped,
                                index: pc,
                                deferred: false,
                            });
                            end_time = end_time.max(exec);
                            env.regs = regs;
                            return Ok(finish(
                                spec, profile, env, events, arch_faults, deferred, regs,
                                end_time, executed, pattern, pending, engage, record_events,
                            ));
                        }
                    }
                    if record_pattern && check != TagCheck::Unmapped {
                        push_pattern(&mut pattern, line, false);
                    }
                    advance_prefetcher(
                        profile, prefetcher, training, line, exec, &mut cursor, &mut diverged,
                        &mut pending, record_events, &mut events,
                    );
                }
                pc += 1;
                seg_idx += 1;
            }
        }
    }

    env.regs = regs;
    Ok(finish(
        spec, profile, env, events, arch_faults, deferred, regs, end_time, executed, pattern,
        pending, engage, record_events,
    ))
}

/// Run epilogue: drain remaining prefetches, report deferred faults, and
/// apply the trial-boundary confidence reset.
#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &mut SpeculationState,
    profile: &CoreProfile,
    env: &mut RunEnvironment,
    mut events: Vec<Event>,
    mut arch_faults: Vec<ArchFault>,
    deferred: Vec<usize>,
    regs: [u64; NUM_REGS],
    mut end_time: u64,
    executed: usize,
    pattern: Vec<PatternElem>,
    mut pending: Vec<PendingPrefetch>,
    engage: Option<u64>,
    record_events: bool,
) -> RunOutput {
    drain_prefetches(
        u64::MAX, &mut pending, &mut env.cache, engage, record_events, &mut events,
        &mut end_time,
    );
    for index in deferred {
        if record_events {
            events.push(Event {
                cycle: end_time,
                kind: EventKind::ArchFaultRaised { kind: FaultKind::TagMismatch, index },
            });
        }
        arch_faults.push(ArchFault { kind: FaultKind::TagMismatch, index, deferred: true });
    }
    // Trial boundary: a depleted budget refills (deficit carries over);
    // suppression does not outlive the run.
    if spec.confidence <= 0 {
        spec.confidence += profile.confidence_budget;
    }
    spec.suppressed = false;
    RunOutput {
        trace: ExecutionTrace { events, regs, cycles: end_time, arch_faults, executed },
        pattern,
    }
}

/// Record a committed access into the training pattern. Every access is
/// kept — repeat touches of one line are distinct pattern steps, which is
/// what lets replay walk through back-to-back probes of the same line.
fn push_pattern(pattern: &mut Vec<PatternElem>, line: u64, is_load: bool) {
    pattern.push(PatternElem { line, is_load });
}

fn suppressed_at(engage: Option<u64>, t: u64) -> bool {
    engage.is_some_and(|e| t >= e)
}

/// Speculative access fill: blocked while suppression is engaged. Returns
/// the access latency (hit or miss) regardless of the fill outcome.
#[allow(clippy::too_many_arguments)]
fn fill_for_access(
    line: u64,
    exec: u64,
    cause: FillCause,
    cache: &mut CacheModel,
    engage: Option<u64>,
    record_events: bool,
    events: &mut Vec<Event>,
) -> u64 {
    let latency = cache.peek_latency(line);
    if cache.present(line) {
        cache.fill(line);
    } else if suppressed_at(engage, exec) {
        if record_events {
            events.push(Event { cycle: exec, kind: EventKind::FillSuppressed { line, cause } });
        }
    } else {
        cache.fill(line);
        if record_events {
            events.push(Event { cycle: exec, kind: EventKind::Fill { line, cause } });
        }
    }
    latency
}

/// Committed access fill: suppression never applies.
fn committed_fill(
    line: u64,
    exec: u64,
    cause: FillCause,
    cache: &mut CacheModel,
    record_events: bool,
    events: &mut Vec<Event>,
) -> u64 {
    let latency = cache.peek_latency(line);
    if !cache.present(line) && record_events {
        events.push(Event { cycle: exec, kind: EventKind::Fill { line, cause } });
    }
    cache.fill(line);
    latency
}

/// Charge a wrong-path tag fault against the confidence budget. The first
/// fault of a run is held pending; the second charges for both; later
/// faults charge one each. Crossing zero schedules suppression engagement.
#[allow(clippy::too_many_arguments)]
fn wrong_path_fault(
    profile: &CoreProfile,
    spec: &mut SpeculationState,
    spec_ctx: &Option<SpecCtx>,
    group: u64,
    exec: u64,
    trial_faults: &mut u32,
    crossed: &mut bool,
    engage: &mut Option<u64>,
    record_events: bool,
    events: &mut Vec<Event>,
) {
    if !profile.v1_shrink_enabled || profile.mitigations.ignore_tcf_for_speculation {
        return;
    }
    let Some(ctx) = spec_ctx else { return };
    if group.saturating_sub(ctx.branch_group) >= profile.wpe_window_cycles {
        return;
    }
    *trial_faults += 1;
    let charge = match *trial_faults {
        1 => 0,
        2 => 2,
        _ => 1,
    };
    if charge == 0 {
        return;
    }
    spec.confidence -= charge;
    if spec.confidence <= 0 && !*crossed {
        *crossed = true;
        let at = exec + ENGAGE_LATENCY;
        *engage = Some(at);
        spec.suppressed = true;
        if record_events {
            events.push(Event { cycle: at, kind: EventKind::SuppressionEngaged });
        }
    }
}

/// Replay one access against the recorded pattern; a match schedules the
/// following load line, a mismatch cancels replay for the rest of the run.
#[allow(clippy::too_many_arguments)]
fn advance_prefetcher(
    profile: &CoreProfile,
    prefetcher: &PrefetcherState,
    training: bool,
    line: u64,
    exec: u64,
    cursor: &mut usize,
    diverged: &mut bool,
    pending: &mut Vec<PendingPrefetch>,
    record_events: bool,
    events: &mut Vec<Event>,
) {
    if training || !profile.prefetcher_enabled || *diverged {
        return;
    }
    let pattern = &prefetcher.pattern;
    if *cursor >= pattern.len() {
        return;
    }
    if pattern[*cursor].line == line {
        *cursor += 1;
        if let Some(next) = pattern.get(*cursor) {
            if next.is_load {
                pending.push(PendingPrefetch { line: next.line, fire: exec + PREFETCH_LATENCY });
                if record_events {
                    events.push(Event {
                        cycle: exec,
                        kind: EventKind::PrefetchScheduled { line: next.line },
                    });
                }
            }
        }
    } else {
        *diverged = true;
        if !pending.is_empty() || record_events {
            pending.clear();
        }
        if record_events {
            events.push(Event { cycle: exec, kind: EventKind::PrefetchCancelled });
        }
    }
}

/// Fire all pending prefetches due at or before `upto`. Fires while
/// suppression is engaged are blocked.
fn drain_prefetches(
    upto: u64,
    pending: &mut Vec<PendingPrefetch>,
    cache: &mut CacheModel,
    engage: Option<u64>,
    record_events: bool,
    events: &mut Vec<Event>,
    end_time: &mut u64,
) {
    let mut remaining = Vec::new();
    for p in pending.drain(..) {
        if p.fire <= upto {
            *end_time = (*end_time).max(p.fire);
            if suppressed_at(engage, p.fire) {
                if record_events {
                    events.push(Event {
                        cycle: p.fire,
                        kind: EventKind::FillSuppressed { line: p.line, cause: FillCause::Prefetch },
                    });
                }
            } else if !cache.present(p.line) {
                cache.fill(p.line);
                if record_events {
                    events.push(Event {
                        cycle: p.fire,
                        kind: EventKind::Fill { line: p.line, cause: FillCause::Prefetch },
                    });
                }
            } else {
                cache.fill(p.line);
            }
        } else {
            remaining.push(p);
        }
    }
    *pending = remaining;
}

/// Restore architectural state at the mispredicted branch and resume the
/// committed path at its resolution time.
#[allow(clippy::too_many_arguments)]
fn squash(
    ctx: SpecCtx,
    regs: &mut [u64; NUM_REGS],
    ready: &mut [u64; NUM_REGS],
    poisoned: &mut [bool; NUM_REGS],
    pc: &mut usize,
    seg_base: &mut u64,
    seg_idx: &mut u64,
    last_exec: &mut u64,
    store_buf: &mut Vec<SpecStore>,
    end_time: &mut u64,
    record_events: bool,
    events: &mut Vec<Event>,
) {
    *regs = ctx.saved_regs;
    *ready = ctx.saved_ready;
    *poisoned = ctx.saved_poisoned;
    *pc = ctx.committed_pc;
    *seg_base = ctx.resolution;
    *seg_idx = 0;
    *last_exec = ctx.resolution;
    store_buf.clear();
    *end_time = (*end_time).max(ctx.resolution);
    if record_events {
        events.push(Event { cycle: ctx.resolution, kind: EventKind::Squash });
    }
}

/// If `exec` reaches the pending resolution time, squash instead of
/// issuing. Returns true when a squash happened (caller continues).
#[allow(clippy::too_many_arguments)]
fn squash_if_resolved(
    exec: u64,
    spec_ctx: &mut Option<SpecCtx>,
    regs: &mut [u64; NUM_REGS],
    ready: &mut [u64; NUM_REGS],
    poisoned: &mut [bool; NUM_REGS],
    pc: &mut usize,
    seg_base: &mut u64,
    seg_idx: &mut u64,
    last_exec: &mut u64,
    store_buf: &mut Vec<SpecStore>,
    end_time: &mut u64,
    record_events: bool,
    events: &mut Vec<Event>,
) -> bool {
    let resolved = spec_ctx.as_ref().is_some_and(|ctx| exec >= ctx.resolution);
    if resolved {
        let ctx = spec_ctx.take().unwrap();
        squash(
            ctx, regs, ready, poisoned, pc, seg_base, seg_idx, last_exec, store_buf, end_time,
            record_events, events,
        );
    }
    resolved
}
