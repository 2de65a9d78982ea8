//! Allocator-level tag-assignment models and the attack loops that defeat them.
//!
//! Memory tagging turns a use-after-free or linear overflow from a silent
//! corruption into a probabilistic one: the access only lands when the
//! attacker's stale (or forged) pointer tag happens to equal the tag the
//! allocator assigned to the reused memory. This module models the three
//! common tag-assignment disciplines and measures how many allocator
//! round-trips an attacker needs before a corrupting access goes through
//! without an architectural fault.
//!
//! # Heap model
//!
//! [`HeapModel`] is a bump-map of fixed 16-byte slots (one tag granule per
//! slot) over a [`TaggedMemory`]. Allocation reuses the slot with whatever tag
//! it currently carries; it is *release* that re-tags, mirroring the hardened
//! allocators being modelled. `free` validates the full tagged pointer, so
//! double frees and wrong-tag frees are caught as explicit errors rather than
//! silently retagging the wrong slot.
//!
//! # Tag policies
//!
//! * [`TagPolicy::Scudo`] — release draws a fresh random tag different from
//!   the current one, from the full 16-value space. With `odd_even` set,
//!   even-indexed slots only ever carry even tags and odd-indexed slots odd
//!   tags, halving the search space per slot but making *adjacent* slots
//!   provably disjoint.
//! * [`TagPolicy::PartitionAlloc`] — release increments the tag, wrapping
//!   within 0x1..=0xf and never assigning 0x0 (reserved for metadata). Fully
//!   deterministic: a stale pointer matches again after exactly one full
//!   cycle.
//! * [`TagPolicy::Kernel`] — like plain Scudo but over 15 values (0x0..=0xe),
//!   reserving 0xf as the kernel's match-all tag.
//!
//! The attack loops themselves live in [`attack`] and are re-exported here.

mod attack;
#[cfg(test)]
mod tests;

pub use attack::{
    bypass_overflow, bypass_uaf, bypass_uaf_from, corrupting_store, overflow_campaign,
    uaf_campaign, AttackConfig, AttackError, AttackOutcome, AttackStats, OracleModel,
    CORRUPT_MARKER,
};

use crate::tagmem::{MemError, TaggedMemory, TaggedPointer, GRANULE_SIZE};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

/// Base address of the modelled heap region.
pub const HEAP_BASE: u64 = 0x0001_0000;

/// Size of one allocation slot: a single tag granule.
pub const SLOT_SIZE: u64 = GRANULE_SIZE;

/// Tag-assignment discipline applied when a slot is released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagPolicy {
    /// Random re-tag on release, never repeating the outgoing tag. With
    /// `odd_even`, the tag parity is pinned to the slot-index parity.
    Scudo {
        /// Restrict each slot to tags matching its index parity.
        odd_even: bool,
    },
    /// Deterministic increment within 0x1..=0xf, skipping 0x0.
    PartitionAlloc,
    /// Random re-tag over 0x0..=0xe, reserving 0xf for privileged accesses.
    Kernel,
}

impl TagPolicy {
    /// Tags this policy may ever assign to `slot`.
    pub fn tag_class(&self, slot: usize) -> Vec<u8> {
        match self {
            TagPolicy::Scudo { odd_even: false } => (0x0..=0xf).collect(),
            TagPolicy::Scudo { odd_even: true } => {
                let parity = (slot % 2) as u8;
                (0x0..=0xf).filter(|t| t % 2 == parity).collect()
            }
            TagPolicy::PartitionAlloc => (0x1..=0xf).collect(),
            TagPolicy::Kernel => (0x0..=0xe).collect(),
        }
    }

    /// Tag assigned to `slot` when it is released while carrying `current`.
    pub fn release_tag(&self, slot: usize, current: u8, rng: &mut impl Rng) -> u8 {
        match self {
            TagPolicy::PartitionAlloc => {
                if current >= 0xf {
                    0x1
                } else {
                    current + 1
                }
            }
            _ => {
                let class = self.tag_class(slot);
                let candidates: Vec<u8> = class.into_iter().filter(|&t| t != current).collect();
                *candidates.choose(rng).expect("tag class never a singleton")
            }
        }
    }

    /// Unconstrained draw from the slot's tag class, used for initial slot
    /// tags and for objects spawned fresh into a slot.
    pub fn fresh_tag(&self, slot: usize, rng: &mut impl Rng) -> u8 {
        *self
            .tag_class(slot)
            .choose(rng)
            .expect("tag class never empty")
    }

    /// Short lowercase name used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            TagPolicy::Scudo { odd_even: false } => "scudo",
            TagPolicy::Scudo { odd_even: true } => "scudo_odd_even",
            TagPolicy::PartitionAlloc => "partition_alloc",
            TagPolicy::Kernel => "kernel",
        }
    }
}

/// Errors surfaced by the heap model itself.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeapError {
    /// `free` called on a slot that is already free.
    #[error("double free of slot {0}")]
    DoubleFree(usize),
    /// Pointer outside the heap, misaligned, or carrying a stale tag.
    #[error("invalid pointer {0:#x} passed to the allocator")]
    InvalidPointer(u64),
    /// All slots are live.
    #[error("heap has no free slot")]
    OutOfSlots,
    /// Backing-memory failure (should not occur once the region is mapped).
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    Free,
    Live,
}

/// Fixed-slot heap over tagged memory. One slot is one granule; the slot's
/// tag lives in the backing [`TaggedMemory`] and is the single source of
/// truth.
#[derive(Debug, Clone)]
pub struct HeapModel {
    memory: TaggedMemory,
    policy: TagPolicy,
    states: Vec<SlotState>,
}

impl HeapModel {
    /// Build a heap of `slots` granule-sized slots, each starting free with a
    /// fresh tag drawn from the policy's class for that slot.
    pub fn new(policy: TagPolicy, slots: usize, rng: &mut impl Rng) -> Self {
        let mut memory = TaggedMemory::new();
        for slot in 0..slots {
            let tag = policy.fresh_tag(slot, rng);
            memory.map_region(HEAP_BASE + slot as u64 * SLOT_SIZE, SLOT_SIZE, tag);
        }
        HeapModel {
            memory,
            policy,
            states: vec![SlotState::Free; slots],
        }
    }

    /// Number of slots.
    pub fn slots(&self) -> usize {
        self.states.len()
    }

    /// Policy in force.
    pub fn policy(&self) -> TagPolicy {
        self.policy
    }

    /// Backing memory (read-only view).
    pub fn memory(&self) -> &TaggedMemory {
        &self.memory
    }

    fn addr_of(&self, slot: usize) -> u64 {
        HEAP_BASE + slot as u64 * SLOT_SIZE
    }

    fn slot_of(&self, ptr: TaggedPointer) -> Result<usize, HeapError> {
        let addr = ptr.addr();
        if addr < HEAP_BASE || addr % SLOT_SIZE != 0 {
            return Err(HeapError::InvalidPointer(ptr.raw()));
        }
        let slot = ((addr - HEAP_BASE) / SLOT_SIZE) as usize;
        if slot >= self.states.len() {
            return Err(HeapError::InvalidPointer(ptr.raw()));
        }
        Ok(slot)
    }

    /// Current tag of `slot` as recorded in the backing memory.
    pub fn slot_tag(&self, slot: usize) -> u8 {
        self.memory
            .tag_at(self.addr_of(slot))
            .expect("heap slots are always mapped")
    }

    /// Allocate the lowest free slot. Reuse keeps the tag assigned at the
    /// previous release; only `free` re-tags.
    pub fn alloc(&mut self) -> Result<TaggedPointer, HeapError> {
        let slot = self
            .states
            .iter()
            .position(|s| *s == SlotState::Free)
            .ok_or(HeapError::OutOfSlots)?;
        self.states[slot] = SlotState::Live;
        Ok(TaggedPointer::new(self.addr_of(slot), self.slot_tag(slot)))
    }

    /// Release a live allocation. The pointer must carry the slot's current
    /// tag; the slot is then re-tagged per the policy.
    pub fn free(&mut self, ptr: TaggedPointer, rng: &mut impl Rng) -> Result<(), HeapError> {
        let slot = self.slot_of(ptr)?;
        if self.states[slot] == SlotState::Free {
            return Err(HeapError::DoubleFree(slot));
        }
        if ptr.tag() != self.slot_tag(slot) {
            return Err(HeapError::InvalidPointer(ptr.raw()));
        }
        let next = self.policy.release_tag(slot, ptr.tag(), rng);
        self.memory.set_tag(self.addr_of(slot), next)?;
        self.states[slot] = SlotState::Free;
        Ok(())
    }

    /// Release and immediately re-spawn an object in `slot` with an
    /// unconstrained fresh tag draw, modelling a new object of a different
    /// provenance landing in the reused slot.
    pub fn respawn(&mut self, slot: usize, rng: &mut impl Rng) -> Result<TaggedPointer, HeapError> {
        if self.states[slot] == SlotState::Free {
            return Err(HeapError::DoubleFree(slot));
        }
        let tag = self.policy.fresh_tag(slot, rng);
        self.memory.set_tag(self.addr_of(slot), tag)?;
        Ok(TaggedPointer::new(self.addr_of(slot), tag))
    }

    /// Override a slot's tag directly. Analysis hook used to stage specific
    /// scenarios (e.g. a dangling pointer whose tag already matches).
    pub fn force_retag(&mut self, slot: usize, tag: u8) {
        self.memory
            .set_tag(self.addr_of(slot), tag)
            .expect("heap slots are always mapped");
    }

    fn take_memory(&mut self) -> TaggedMemory {
        std::mem::take(&mut self.memory)
    }

    fn restore_memory(&mut self, memory: TaggedMemory) {
        self.memory = memory;
    }
}
