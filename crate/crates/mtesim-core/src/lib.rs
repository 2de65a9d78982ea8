//! Deterministic desk-scale model of an out-of-order core with MTE-style
//! memory tagging, built to study two speculative tag-leakage mechanisms and
//! the attack loops they enable:
//!
//! * confidence-budget speculation shrinkage — repeated wrong-path tag-check
//!   faults deplete a counter; at zero the core suppresses speculative cache
//!   fills and prefetches, making a far probe access observably uncached on a
//!   periodic schedule (`gadgets::build_v1`);
//! * dispatch-group store-to-load forwarding gating — a speculative store and
//!   load to the same address dispatched in one group defeat dependency
//!   detection, so the load runs its own tag check and a mismatch blocks the
//!   forward, starving a dependent probe access (`gadgets::build_v2`).
//!
//! Everything is seed-deterministic: identical inputs produce byte-identical
//! traces, curves, and reports.
//!
//! Module map:
//! * [`isa`] — tiny register ISA with a textual DSL (assemble/disassemble).
//! * [`tagmem`] — tagged memory, granule tags, cache model, timed probes.
//! * [`speccore`] — the speculative core simulator (profiles, traces).
//! * [`gadgets`] — gadget builders, trial harness, sweeps, ablation, the
//!   tag-leak oracle, and mitigation transforms.
//! * [`fuzzer`] — template-based differential fuzzer rediscovering both
//!   gadget families.
//! * [`attacksim`] — allocator tag policies and end-to-end bypass loops.
//! * [`report`] — CSV/JSON emission helpers shared with the CLI.

pub mod attacksim;
pub mod fuzzer;
pub mod gadgets;
pub mod isa;
pub mod report;
pub mod rng;
pub mod speccore;
pub mod tagmem;

pub use isa::{AsmError, Instruction, Program, Reg};
pub use speccore::{CoreProfile, ExecutionTrace, MteMode, RunEnvironment, SimError, Simulator};
pub use tagmem::{CacheModel, TagCheck, TaggedMemory, TaggedPointer, Timer};
