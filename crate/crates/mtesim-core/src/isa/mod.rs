//! Minimal register ISA executed by the core model.
//!
//! 29 general registers (`x0`..`x28`), 64-bit values. Loads and stores move
//! 8 bytes through a register-held address (no addressing-mode arithmetic —
//! addresses are composed with `orr`/`eor`/`mov`). `beqz` branches when its
//! register is zero; `sb`/`isb` are speculation barriers; `halt` ends a run.
//!
//! Programs carry a label table mapping names to instruction indices; branch
//! operands are resolved indices so traces and builders never chase strings.
//! The textual DSL round-trips: `assemble(disassemble(p)) == p` for programs
//! whose labels are in canonical (`L{index}`) form, and disassembled text is
//! a fixpoint under reassembly.

mod text;

pub use text::{assemble, disassemble};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Number of general registers (`x0`..`x28`).
pub const NUM_REGS: usize = 29;

/// A general register, `x0`..`x28`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl Reg {
    pub const MAX_INDEX: u8 = (NUM_REGS - 1) as u8;

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_valid(self) -> bool {
        self.0 <= Self::MAX_INDEX
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// One instruction. Branch targets are instruction indices into the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Nop,
    /// Instruction synchronization barrier; also halts speculative execution.
    Isb,
    /// Speculation barrier; never appears in fuzzer alphabets, only via
    /// mitigation transforms.
    Sb,
    Halt,
    Mov { dst: Reg, imm: u64 },
    Orr { dst: Reg, a: Reg, b: Reg },
    Eor { dst: Reg, a: Reg, b: Reg },
    Ldr { dst: Reg, addr: Reg },
    Str { src: Reg, addr: Reg },
    Beqz { cond: Reg, target: usize },
    Jmp { target: usize },
}

impl Instruction {
    /// Registers read by this instruction.
    pub fn sources(&self) -> Vec<Reg> {
        match *self {
            Instruction::Orr { a, b, .. } | Instruction::Eor { a, b, .. } => vec![a, b],
            Instruction::Ldr { addr, .. } => vec![addr],
            Instruction::Str { src, addr } => vec![src, addr],
            Instruction::Beqz { cond, .. } => vec![cond],
            _ => vec![],
        }
    }

    /// Register written by this instruction, if any.
    pub fn dest(&self) -> Option<Reg> {
        match *self {
            Instruction::Mov { dst, .. }
            | Instruction::Orr { dst, .. }
            | Instruction::Eor { dst, .. }
            | Instruction::Ldr { dst, .. } => Some(dst),
            _ => None,
        }
    }
}

/// A program: instructions, label table (name → instruction index), entry
/// index. A label index equal to `instructions.len()` marks program end.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
}

impl Program {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Program { instructions, labels: BTreeMap::new(), entry: 0 }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// True when `validate` reports no errors (warnings allowed).
    pub fn is_valid(&self) -> bool {
        self.validate().iter().all(|d| d.severity != Severity::Error)
    }

    /// Structural diagnostics: bad register indices, out-of-range branch
    /// targets or labels, missing halt, empty body.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let len = self.instructions.len();
        if self.instructions.is_empty() {
            out.push(Diagnostic::warning(None, "program is empty"));
        }
        if self.entry > len {
            out.push(Diagnostic::error(None, format!("entry {} out of range", self.entry)));
        }
        for (i, instr) in self.instructions.iter().enumerate() {
            for r in instr.sources() {
                if !r.is_valid() {
                    out.push(Diagnostic::error(Some(i), format!("source register {r} out of range")));
                }
            }
            if let Some(r) = instr.dest() {
                if !r.is_valid() {
                    out.push(Diagnostic::error(Some(i), format!("destination register {r} out of range")));
                }
            }
            let target = match *instr {
                Instruction::Beqz { target, .. } | Instruction::Jmp { target } => Some(target),
                _ => None,
            };
            if let Some(t) = target {
                // target == len is a legal branch to program end
                if t > len {
                    out.push(Diagnostic::error(Some(i), format!("branch target {t} out of range")));
                }
            }
        }
        for (name, &idx) in &self.labels {
            if idx > len {
                out.push(Diagnostic::error(None, format!("label `{name}` points past program end")));
            }
        }
        if !self.instructions.iter().any(|i| matches!(i, Instruction::Halt)) && !self.instructions.is_empty() {
            out.push(Diagnostic::warning(None, "program contains no halt"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding; `index` is the instruction it refers to, when any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub index: Option<usize>,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(index: Option<usize>, message: impl Into<String>) -> Self {
        Diagnostic { index, severity: Severity::Error, message: message.into() }
    }

    fn warning(index: Option<usize>, message: impl Into<String>) -> Self {
        Diagnostic { index, severity: Severity::Warning, message: message.into() }
    }
}

/// Assembly errors. Line numbers are 1-based.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("syntax error on line {0}")]
    SyntaxError(usize),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_flags_bad_register_and_target() {
        let p = Program::new(vec![
            Instruction::Ldr { dst: Reg(40), addr: Reg(1) },
            Instruction::Jmp { target: 9 },
            Instruction::Halt,
        ]);
        let errs: Vec<_> =
            p.validate().into_iter().filter(|d| d.severity == Severity::Error).collect();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn branch_to_program_end_is_legal() {
        let p = Program::new(vec![Instruction::Beqz { cond: Reg(0), target: 2 }, Instruction::Halt]);
        assert!(p.is_valid());
    }

    #[test]
    fn missing_halt_is_a_warning_not_error() {
        let p = Program::new(vec![Instruction::Nop]);
        assert!(p.is_valid());
        assert!(p.validate().iter().any(|d| d.severity == Severity::Warning));
    }
}
