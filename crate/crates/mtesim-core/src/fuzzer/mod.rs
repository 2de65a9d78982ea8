//! Template fuzzer: rediscovers leak gadgets by mutation and
//! differential execution.
//!
//! Candidates are instruction blocks spliced into a fixed skeleton
//! (condition load, branch over the block, halt), so every candidate
//! runs the block only on the mispredicted path. A candidate *finds*
//! something when running it with a correctly vs wrongly tagged guess
//! pointer leaves different cache footprints in a dedicated probe
//! region — and when repeating the experiment with two identical tags
//! leaves none, which filters out footprint differences that merely
//! track trial phase rather than the tag.
//!
//! The mutation walk restarts from a rotating seed corpus periodically
//! and after every find. Finds are minimized by greedy removal under an
//! exact-signature check, deduplicated by a register-normalized listing,
//! and classified by replaying one depleted wrong-tag run with event
//! recording on.

mod campaign;
mod diff;
#[cfg(test)]
mod tests;

pub use campaign::{
    run_campaign, seed_corpus, CampaignConfig, CampaignReport, FamilyCounts, Finding,
};
pub use diff::{classify, execute_differential, GadgetFamily};

use crate::isa::{Instruction as I, Program, Reg, NUM_REGS};
use crate::tagmem::TaggedPointer;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Tag of the guessed granule in fuzzing environments.
pub const FUZZ_SECRET_TAG: u8 = 3;
/// The wrong guess used for the differential.
pub const FUZZ_WRONG_TAG: u8 = 9;
/// Base of the probe region the differential scans.
pub const PROBE_BASE: u64 = 0x8000;
/// Probe region size: 64 cache lines.
pub const PROBE_LEN: u64 = 4096;
/// Condition granule address.
pub const FUZZ_COND_ADDR: u64 = 0x1040;
/// Guessed granule address.
pub const FUZZ_GUESS_ADDR: u64 = 0x2080;

/// Register roles and initial values for one fuzzing campaign, drawn
/// once per campaign so candidates are comparable.
#[derive(Debug, Clone)]
pub struct FuzzContext {
    pub cond_ptr: Reg,
    pub cond_val: Reg,
    pub guess: Reg,
    /// Registers preloaded with correctly tagged probe-region pointers.
    pub pool: Vec<Reg>,
    /// Destination registers candidates may overwrite.
    pub scratch: Vec<Reg>,
    /// Initial values for everything except the guess register (the
    /// harness installs that per trial).
    pub init_regs: Vec<(Reg, u64)>,
}

impl FuzzContext {
    pub fn generate(rng: &mut ChaCha12Rng) -> Self {
        let mut regs: Vec<Reg> = (0..NUM_REGS as u8).map(Reg).collect();
        regs.shuffle(rng);
        let cond_ptr = regs[0];
        let cond_val = regs[1];
        let guess = regs[2];
        let pool: Vec<Reg> = regs[3..11].to_vec();
        let scratch: Vec<Reg> = regs[11..19].to_vec();

        let mut init_regs = vec![(cond_ptr, TaggedPointer::new(FUZZ_COND_ADDR, 0).raw())];
        // Pool pointers land on 128-byte-aligned probe lines so OR
        // combinations of their bits stay inside the region.
        for &reg in &pool {
            let slot = rng.gen_range(0u64..32);
            init_regs.push((reg, TaggedPointer::new(PROBE_BASE | (slot << 7), 0).raw()));
        }
        // Scratch registers start as zeros or junk words.
        for &reg in &scratch {
            let value = if rng.gen_bool(0.5) { 0 } else { rng.gen::<u64>() };
            init_regs.push((reg, value));
        }
        FuzzContext { cond_ptr, cond_val, guess, pool, scratch, init_regs }
    }
}

/// One candidate: the block spliced between branch and halt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub block: Vec<I>,
}

impl TestCase {
    pub fn new(block: Vec<I>) -> Self {
        TestCase { block }
    }

    /// Splice the block into the skeleton. The branch jumps past the
    /// halt, so the committed measured path never runs the block.
    pub fn program(&self, ctx: &FuzzContext) -> Program {
        let mut ins = vec![
            I::Ldr { dst: ctx.cond_val, addr: ctx.cond_ptr },
            I::Beqz { cond: ctx.cond_val, target: 2 + self.block.len() + 1 },
        ];
        ins.extend(self.block.iter().copied());
        ins.push(I::Halt);
        Program::new(ins)
    }
}

fn pick(regs: &[Reg], rng: &mut ChaCha12Rng) -> Reg {
    regs[rng.gen_range(0..regs.len())]
}

/// Address operand: the guess pointer a quarter of the time, otherwise
/// a pool pointer or a recently written register.
fn address_operand(ctx: &FuzzContext, written: &[Reg], rng: &mut ChaCha12Rng) -> Reg {
    let roll: f64 = rng.gen();
    if roll < 0.25 {
        ctx.guess
    } else if roll < 0.75 || written.is_empty() {
        pick(&ctx.pool, rng)
    } else {
        pick(written, rng)
    }
}

fn data_operand(ctx: &FuzzContext, written: &[Reg], rng: &mut ChaCha12Rng) -> Reg {
    let roll: f64 = rng.gen();
    if roll < 0.5 {
        pick(&ctx.pool, rng)
    } else if roll < 0.75 && !written.is_empty() {
        pick(written, rng)
    } else {
        pick(&ctx.scratch, rng)
    }
}

/// Draw one instruction from the campaign alphabet.
pub fn gen_instruction(ctx: &FuzzContext, written: &[Reg], rng: &mut ChaCha12Rng) -> I {
    let roll: f64 = rng.gen();
    if roll < 0.30 {
        I::Ldr { dst: pick(&ctx.scratch, rng), addr: address_operand(ctx, written, rng) }
    } else if roll < 0.50 {
        I::Str {
            src: data_operand(ctx, written, rng),
            addr: address_operand(ctx, written, rng),
        }
    } else if roll < 0.75 {
        // Half the or-instructions extend a serial chain through one
        // register, the natural way long issue delays arise.
        if rng.gen_bool(0.5) {
            let d = pick(&ctx.scratch, rng);
            I::Orr { dst: d, a: d, b: d }
        } else {
            I::Orr {
                dst: pick(&ctx.scratch, rng),
                a: data_operand(ctx, written, rng),
                b: data_operand(ctx, written, rng),
            }
        }
    } else if roll < 0.90 {
        I::Eor {
            dst: pick(&ctx.scratch, rng),
            a: data_operand(ctx, written, rng),
            b: data_operand(ctx, written, rng),
        }
    } else if roll < 0.99 {
        I::Nop
    } else {
        I::Isb
    }
}

fn written_before(block: &[I], upto: usize) -> Vec<Reg> {
    let mut written: Vec<Reg> = Vec::new();
    for ins in &block[..upto] {
        if let Some(dst) = ins.dest() {
            if !written.contains(&dst) {
                written.push(dst);
            }
        }
    }
    // Most recent destinations matter most; keep the tail.
    if written.len() > 4 {
        written.split_off(written.len() - 4)
    } else {
        written
    }
}

/// One mutation step: insert, delete, or replace a single instruction.
pub fn mutate(case: &TestCase, ctx: &FuzzContext, max_block: usize, rng: &mut ChaCha12Rng) -> TestCase {
    let mut block = case.block.clone();
    let roll: f64 = rng.gen();
    if block.is_empty() || (roll < 0.45 && block.len() < max_block) {
        let pos = rng.gen_range(0..=block.len());
        let ins = gen_instruction(ctx, &written_before(&block, pos), rng);
        block.insert(pos, ins);
    } else if roll < 0.725 && roll >= 0.45 {
        let pos = rng.gen_range(0..block.len());
        block.remove(pos);
    } else {
        let pos = rng.gen_range(0..block.len());
        block[pos] = gen_instruction(ctx, &written_before(&block, pos), rng);
    }
    TestCase::new(block)
}

/// Register-normalized listing: campaign roles keep stable names, other
/// registers are numbered by first appearance. Two finds with the same
/// listing are the same gadget shape.
pub fn canonical_listing(case: &TestCase, ctx: &FuzzContext) -> String {
    use std::collections::BTreeMap;
    use std::fmt::Write;

    let mut names: BTreeMap<u8, String> = BTreeMap::new();
    names.insert(ctx.cond_ptr.0, "C".to_string());
    names.insert(ctx.cond_val.0, "c".to_string());
    names.insert(ctx.guess.0, "G".to_string());
    for (i, reg) in ctx.pool.iter().enumerate() {
        names.insert(reg.0, format!("P{i}"));
    }
    let mut next = 0usize;
    let mut name = |reg: Reg, names: &mut BTreeMap<u8, String>| -> String {
        names
            .entry(reg.0)
            .or_insert_with(|| {
                let n = format!("s{next}");
                next += 1;
                n
            })
            .clone()
    };

    let mut out = String::new();
    for ins in &case.block {
        match *ins {
            I::Nop => out.push_str("nop"),
            I::Isb => out.push_str("isb"),
            I::Sb => out.push_str("sb"),
            I::Halt => out.push_str("halt"),
            I::Mov { dst, imm } => {
                let d = name(dst, &mut names);
                let _ = write!(out, "mov {d}, #{imm}");
            }
            I::Orr { dst, a, b } => {
                let (a, b) = (name(a, &mut names), name(b, &mut names));
                let d = name(dst, &mut names);
                let _ = write!(out, "orr {d}, {a}, {b}");
            }
            I::Eor { dst, a, b } => {
                let (a, b) = (name(a, &mut names), name(b, &mut names));
                let d = name(dst, &mut names);
                let _ = write!(out, "eor {d}, {a}, {b}");
            }
            I::Ldr { dst, addr } => {
                let a = name(addr, &mut names);
                let d = name(dst, &mut names);
                let _ = write!(out, "ldr {d}, [{a}]");
            }
            I::Str { src, addr } => {
                let s = name(src, &mut names);
                let a = name(addr, &mut names);
                let _ = write!(out, "str {s}, [{a}]");
            }
            I::Beqz { cond, target } => {
                let c = name(cond, &mut names);
                let _ = write!(out, "beqz {c}, @{target}");
            }
            I::Jmp { target } => {
                let _ = write!(out, "jmp @{target}");
            }
        }
        out.push('\n');
    }
    out
}
