//! Leak-gadget construction.
//!
//! Two gadget families share one skeleton: load a condition word, branch
//! over a block when it is zero, and let the wrong path touch memory
//! through an attacker-guessed tagged pointer.
//!
//! - **Confidence-shrinkage family** (`build_v1`): the wrong path probes
//!   the guessed pointer `len_check` times, burns `len_gap` cycles in a
//!   serial filler chain, then makes one test access. Wrong-tag probes
//!   charge the speculation confidence budget; once the budget crosses
//!   zero, fill suppression engages and the test access stops leaving a
//!   cache footprint — so the test-line hit rate is periodic in the trial
//!   number exactly when the guess is wrong.
//! - **Forward-gating family** (`build_v2`): the wrong path stores a known
//!   pointer through the guessed pointer and immediately loads it back.
//!   When store and load share a dispatch group on a gating core, the
//!   forward only happens if the load's own tag check passes; a blocked
//!   forward poisons the destination, the dependent test access never
//!   issues, and the test line stays cold — a deterministic one-shot
//!   signal.
//!
//! Linked-list variants of the first family traverse an XOR-linked list:
//!   each hop reconstructs the next pointer as `stored ^ current`, so the
//!   guessed tag propagates down the chain and each hop repeats the tag
//!   check. `ListMerged` places the final dereference at a merge point
//!   that the committed path also executes (with a benign dummy pointer).
//!
//! Builders return a [`Gadget`]: the program, the memory/register layout
//! it expects ([`TemplateBindings`]), and the parameters it was built
//! from, which is what lets [`mitigate::apply_mitigation`] rebuild a
//! hardened copy.

pub mod harness;
pub mod mitigate;
pub mod oracle;

pub use harness::{
    ablation, sweep_v1_len_gap, sweep_v1_window, sweep_v2_slide_gap, AblationConfig, AblationRow,
    CacheClass, SweepConfig, SweepPoint, TrialHarness, TrialOutcome,
};
pub use mitigate::{apply_mitigation, Mitigation, MitigationError};
pub use oracle::{leak_tag, LeakConfig, LeakError, LeakResult};

use crate::isa::{Instruction as I, Program, Reg};
use crate::tagmem::TaggedPointer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition word: tag 0, distinct cache set from everything else.
pub const COND_ADDR: u64 = 0x1040;
/// The guessed granule; its region carries the secret tag.
pub const GUESS_ADDR: u64 = 0x2080;
/// Primary test line (the probed footprint).
pub const TEST_ADDR: u64 = 0x30C0;
/// Alternate test line for divergent-training experiments.
pub const ALT_TEST_ADDR: u64 = 0x3100;
/// Benign granule the merged list variant dereferences architecturally.
pub const DUMMY_ADDR: u64 = 0x5100;
/// First linked-list node; nodes are one cache line apart.
pub const LIST_BASE: u64 = 0x6140;
/// Tag of the test/alternate/dummy granules (their pointers match).
pub const TEST_TAG: u8 = 5;
const DUMMY_TAG: u8 = 2;

// Fixed register plan shared by all builders.
const R_CONDVAL: Reg = Reg(0);
const R_CONDPTR: Reg = Reg(1);
const R_CHECK: Reg = Reg(2);
const R_GUESS: Reg = Reg(3);
const R_FWD: Reg = Reg(4);
const R_TESTDST: Reg = Reg(5);
const R_TESTPTR: Reg = Reg(6);
const R_STOREVAL: Reg = Reg(7);
const R_CHAIN: Reg = Reg(8);
const R_SCRATCH: Reg = Reg(9);
const R_LIST2: Reg = Reg(10);
const R_ZERO_A: Reg = Reg(20);
const R_ZERO_B: Reg = Reg(21);

/// What the test access is and what it depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Load through an independent, correctly tagged pointer.
    IndepLd,
    /// Store through an independent, correctly tagged pointer.
    IndepSt,
    /// Load through the value the check block loaded.
    DepLd,
    /// Store through the value the check block loaded.
    DepSt,
}

impl TestKind {
    /// Short name used in sweep series labels.
    pub fn label(self) -> &'static str {
        match self {
            TestKind::IndepLd => "ld",
            TestKind::IndepSt => "st",
            TestKind::DepLd => "dep_ld",
            TestKind::DepSt => "dep_st",
        }
    }
}

/// Filler placed between the branch and the check block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerOp {
    /// Serially dependent or-chain: occupies issue slots cycle by cycle.
    OrrDep,
    /// Independent or: consumes dispatch slots only.
    OrrIndep,
    Nop,
}

impl FillerOp {
    pub fn label(self) -> &'static str {
        match self {
            FillerOp::OrrDep => "orr_dep",
            FillerOp::OrrIndep => "orr_indep",
            FillerOp::Nop => "nop",
        }
    }

    fn instruction(self) -> I {
        match self {
            FillerOp::OrrDep => I::Orr { dst: R_CHAIN, a: R_CHAIN, b: R_CHAIN },
            FillerOp::OrrIndep => I::Orr { dst: R_SCRATCH, a: R_ZERO_A, b: R_ZERO_B },
            FillerOp::Nop => I::Nop,
        }
    }
}

/// Which line the test access targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestTarget {
    #[default]
    Primary,
    /// The alternate line: used to train a prefetch pattern that diverges
    /// from the measured program.
    Alternate,
}

/// Parameters of the confidence-shrinkage family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct V1Params {
    /// Number of wrong-path probes of the guessed pointer.
    pub len_check: usize,
    /// Length of the serial filler chain between checks and test.
    pub len_gap: usize,
    /// Fillers inserted between the branch and the check block.
    pub window: usize,
    pub window_filler: FillerOp,
    pub test_kind: TestKind,
    pub test_target: TestTarget,
    /// Speculation barrier immediately before the check block.
    pub sb_before_check: bool,
    /// Speculation barrier immediately before the test access.
    pub sb_before_test: bool,
}

impl Default for V1Params {
    fn default() -> Self {
        V1Params {
            len_check: 2,
            len_gap: 12,
            window: 0,
            window_filler: FillerOp::OrrDep,
            test_kind: TestKind::IndepLd,
            test_target: TestTarget::Primary,
            sb_before_check: false,
            sb_before_test: false,
        }
    }
}

/// Parameters of the forward-gating family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct V2Params {
    /// Fillers before the store: slides the store/load pair across
    /// dispatch-group boundaries.
    pub slide: usize,
    /// Fillers between the store and the load that reads it back.
    pub gap: usize,
    /// Speculation barrier immediately before the store.
    pub sb_before_check: bool,
    /// Speculation barrier immediately before the forwarded load.
    pub sb_before_test: bool,
}

impl Default for V2Params {
    fn default() -> Self {
        V2Params { slide: 0, gap: 0, sb_before_check: false, sb_before_test: false }
    }
}

/// Linked-list shapes of the shrinkage family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V1Variant {
    /// Whole traversal, final dereference included, inside the branch.
    ListInBranch,
    /// Final dereference at a merge point the committed path also runs.
    ListMerged,
}

/// How a gadget was built; carried so mitigations can rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GadgetKind {
    Template,
    V1(V1Params),
    V1List(V1Variant),
    V2(V2Params),
}

/// A mapped, tagged memory region a gadget expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemRegion {
    pub base: u64,
    pub len: u64,
    pub tag: u8,
}

/// Everything a harness needs to run a gadget: which registers carry the
/// condition and guess pointers, where the probed line lives, and the
/// memory image to construct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBindings {
    pub cond_reg: Reg,
    pub guess_reg: Reg,
    pub cond_addr: u64,
    pub guess_addr: u64,
    /// Address whose cache line is flushed before and timed after each
    /// measured run.
    pub probe_addr: u64,
    /// Tag of the probe pointer (matches its region).
    pub probe_tag: u8,
    pub regions: Vec<MemRegion>,
    /// Word stores applied when the harness builds memory.
    pub init_mem: Vec<(u64, u64)>,
    /// Fixed register values (raw tagged pointers or plain words).
    pub init_regs: Vec<(Reg, u64)>,
}

/// A buildable, runnable leak gadget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gadget {
    pub program: Program,
    pub bindings: TemplateBindings,
    pub kind: GadgetKind,
    /// The tag of the guessed granule (what a leak recovers).
    pub secret_tag: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GadgetError {
    #[error("invalid gadget parameters: {0}")]
    InvalidParams(String),
}

fn base_bindings(secret_tag: u8) -> TemplateBindings {
    TemplateBindings {
        cond_reg: R_CONDPTR,
        guess_reg: R_GUESS,
        cond_addr: COND_ADDR,
        guess_addr: GUESS_ADDR,
        probe_addr: TEST_ADDR,
        probe_tag: TEST_TAG,
        regions: vec![
            MemRegion { base: COND_ADDR, len: 16, tag: 0 },
            MemRegion { base: GUESS_ADDR, len: 16, tag: secret_tag },
            MemRegion { base: TEST_ADDR, len: 16, tag: TEST_TAG },
            MemRegion { base: ALT_TEST_ADDR, len: 16, tag: TEST_TAG },
        ],
        init_mem: vec![(GUESS_ADDR, TaggedPointer::new(TEST_ADDR, TEST_TAG).raw())],
        init_regs: vec![
            (R_CONDPTR, TaggedPointer::new(COND_ADDR, 0).raw()),
            (R_TESTPTR, TaggedPointer::new(TEST_ADDR, TEST_TAG).raw()),
        ],
    }
}

/// The bare skeleton the fuzzer mutates: condition load, branch over an
/// empty body, halt. Offsets 0/1 are fixed; blocks are inserted between
/// the branch and the halt.
pub fn build_template(secret_tag: u8) -> Gadget {
    let program = Program::new(vec![
        I::Ldr { dst: R_CONDVAL, addr: R_CONDPTR },
        I::Beqz { cond: R_CONDVAL, target: 2 },
        I::Halt,
    ]);
    Gadget { program, bindings: base_bindings(secret_tag), kind: GadgetKind::Template, secret_tag }
}

/// Build a confidence-shrinkage gadget.
pub fn build_v1(params: V1Params, secret_tag: u8) -> Result<Gadget, GadgetError> {
    if params.len_check == 0 {
        return Err(GadgetError::InvalidParams("len_check must be at least 1".into()));
    }
    if secret_tag > 0xf {
        return Err(GadgetError::InvalidParams("secret_tag must fit in 4 bits".into()));
    }
    let mut body = Vec::new();
    for _ in 0..params.window {
        body.push(params.window_filler.instruction());
    }
    if params.sb_before_check {
        body.push(I::Sb);
    }
    for _ in 0..params.len_check {
        body.push(I::Ldr { dst: R_CHECK, addr: R_GUESS });
    }
    for _ in 0..params.len_gap {
        body.push(I::Orr { dst: R_CHAIN, a: R_CHAIN, b: R_CHAIN });
    }
    if params.sb_before_test {
        body.push(I::Sb);
    }
    body.push(match params.test_kind {
        TestKind::IndepLd => I::Ldr { dst: R_TESTDST, addr: R_TESTPTR },
        TestKind::IndepSt => I::Str { src: R_STOREVAL, addr: R_TESTPTR },
        TestKind::DepLd => I::Ldr { dst: R_TESTDST, addr: R_CHECK },
        TestKind::DepSt => I::Str { src: R_STOREVAL, addr: R_CHECK },
    });

    let mut ins = vec![
        I::Ldr { dst: R_CONDVAL, addr: R_CONDPTR },
        I::Beqz { cond: R_CONDVAL, target: 2 + body.len() + 1 },
    ];
    ins.extend(body);
    ins.push(I::Halt);

    let mut bindings = base_bindings(secret_tag);
    let test_addr = match params.test_target {
        TestTarget::Primary => TEST_ADDR,
        TestTarget::Alternate => ALT_TEST_ADDR,
    };
    bindings.probe_addr = test_addr;
    set_reg(&mut bindings, R_TESTPTR, TaggedPointer::new(test_addr, TEST_TAG).raw());
    // Dependent kinds dereference the loaded word; point it at the test
    // line so a delivered check value carries the probe target.
    set_mem(&mut bindings, GUESS_ADDR, TaggedPointer::new(test_addr, TEST_TAG).raw());

    Ok(Gadget { program: Program::new(ins), bindings, kind: GadgetKind::V1(params), secret_tag })
}

/// Build an XOR-linked-list traversal variant of the shrinkage family.
pub fn build_v1_variant(variant: V1Variant, secret_tag: u8) -> Result<Gadget, GadgetError> {
    if secret_tag > 0xf {
        return Err(GadgetError::InvalidParams("secret_tag must fit in 4 bits".into()));
    }
    let node = |i: u64| LIST_BASE + 64 * i;
    let node_ptr = |i: u64| TaggedPointer::new(node(i), secret_tag).raw();

    let traversal = vec![
        // hop 0: XOR-linked — the stored word is next^current, so the
        // reconstructed pointer inherits the tag of the guessed pointer.
        I::Ldr { dst: R_CHECK, addr: R_GUESS },
        I::Eor { dst: R_FWD, a: R_CHECK, b: R_GUESS },
        I::Ldr { dst: R_TESTDST, addr: R_FWD },
        // hops 1 and 2: plain pointers, correctly tagged in memory.
        I::Ldr { dst: R_STOREVAL, addr: R_TESTDST },
        I::Ldr { dst: R_LIST2, addr: R_STOREVAL },
    ];

    let (ins, merged) = match variant {
        V1Variant::ListInBranch => {
            let mut ins = vec![
                I::Ldr { dst: R_CONDVAL, addr: R_CONDPTR },
                I::Beqz { cond: R_CONDVAL, target: 2 + traversal.len() + 1 },
            ];
            ins.extend(traversal);
            ins.push(I::Halt);
            (ins, false)
        }
        V1Variant::ListMerged => {
            // The final dereference sits at the merge label; the taken
            // path reaches it with the benign initial pointer.
            let mut ins = vec![
                I::Ldr { dst: R_CONDVAL, addr: R_CONDPTR },
                I::Beqz { cond: R_CONDVAL, target: 2 + traversal.len() - 1 },
            ];
            ins.extend(traversal);
            ins.push(I::Halt);
            (ins, true)
        }
    };

    let mut bindings = base_bindings(secret_tag);
    // The guessed pointer is the list head, not the default granule.
    bindings.guess_addr = node(0);
    bindings.probe_addr = node(3);
    bindings.probe_tag = secret_tag;
    for i in 0..4 {
        bindings.regions.push(MemRegion { base: node(i), len: 16, tag: secret_tag });
    }
    bindings.regions.push(MemRegion { base: DUMMY_ADDR, len: 16, tag: DUMMY_TAG });
    bindings.init_mem = vec![
        (node(0), node_ptr(1) ^ node_ptr(0)),
        (node(1), node_ptr(2)),
        (node(2), node_ptr(3)),
        (node(3), 0),
    ];
    if merged {
        set_reg(&mut bindings, R_STOREVAL, TaggedPointer::new(DUMMY_ADDR, DUMMY_TAG).raw());
    }

    Ok(Gadget {
        program: Program::new(ins),
        bindings,
        kind: GadgetKind::V1List(variant),
        secret_tag,
    })
}

/// Build a forward-gating gadget.
pub fn build_v2(params: V2Params, secret_tag: u8) -> Result<Gadget, GadgetError> {
    if secret_tag > 0xf {
        return Err(GadgetError::InvalidParams("secret_tag must fit in 4 bits".into()));
    }
    let mut body = Vec::new();
    for _ in 0..params.slide {
        body.push(I::Nop);
    }
    if params.sb_before_check {
        body.push(I::Sb);
    }
    body.push(I::Str { src: R_STOREVAL, addr: R_GUESS });
    for _ in 0..params.gap {
        body.push(I::Nop);
    }
    if params.sb_before_test {
        body.push(I::Sb);
    }
    body.push(I::Ldr { dst: R_FWD, addr: R_GUESS });
    body.push(I::Ldr { dst: R_TESTDST, addr: R_FWD });

    let mut ins = vec![
        I::Ldr { dst: R_CONDVAL, addr: R_CONDPTR },
        I::Beqz { cond: R_CONDVAL, target: 2 + body.len() + 1 },
    ];
    ins.extend(body);
    ins.push(I::Halt);

    let mut bindings = base_bindings(secret_tag);
    set_reg(&mut bindings, R_STOREVAL, TaggedPointer::new(TEST_ADDR, TEST_TAG).raw());

    Ok(Gadget { program: Program::new(ins), bindings, kind: GadgetKind::V2(params), secret_tag })
}

fn set_reg(bindings: &mut TemplateBindings, reg: Reg, value: u64) {
    if let Some(slot) = bindings.init_regs.iter_mut().find(|(r, _)| *r == reg) {
        slot.1 = value;
    } else {
        bindings.init_regs.push((reg, value));
    }
}

fn set_mem(bindings: &mut TemplateBindings, addr: u64, value: u64) {
    if let Some(slot) = bindings.init_mem.iter_mut().find(|(a, _)| *a == addr) {
        slot.1 = value;
    } else {
        bindings.init_mem.push((addr, value));
    }
}

#[cfg(test)]
mod tests;
