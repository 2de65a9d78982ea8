//! Textual DSL for [`Program`].
//!
//! Line grammar (comments run from `;` to end of line):
//!
//! ```text
//! [label:]... [instruction]
//! instruction := nop | isb | sb | halt
//!              | mov xD, #imm           (decimal or 0x-hex immediate)
//!              | orr xD, xA, xB
//!              | eor xD, xA, xB
//!              | ldr xD, [xA]
//!              | str xS, [xA]
//!              | beqz xC, label
//!              | jmp label
//! ```
//!
//! Labels may share a line with an instruction (`L0: beqz x1, L0`) or stand
//! alone; a trailing label names the program end.

use super::{AsmError, Instruction, Program, Reg};
use std::collections::BTreeMap;

/// Parse DSL text into a [`Program`]. Entry is index 0.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut instructions = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    // (line#, instr index, label name) fixups for branch operands
    let mut fixups: Vec<(usize, usize, String)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut line = raw.split(';').next().unwrap_or("").trim();
        // peel off leading `name:` labels
        while let Some(colon) = line.find(':') {
            let (head, rest) = line.split_at(colon);
            let name = head.trim();
            if !is_label_name(name) {
                return Err(AsmError::SyntaxError(lineno));
            }
            if labels.insert(name.to_string(), instructions.len()).is_some() {
                return Err(AsmError::DuplicateLabel(name.to_string()));
            }
            line = rest[1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        let instr = parse_instruction(line, lineno, instructions.len(), &mut fixups)?;
        instructions.push(instr);
    }

    for (lineno, idx, name) in fixups {
        let Some(&target) = labels.get(&name) else {
            return Err(AsmError::UnresolvedLabel(name));
        };
        match &mut instructions[idx] {
            Instruction::Beqz { target: t, .. } | Instruction::Jmp { target: t } => *t = target,
            _ => return Err(AsmError::SyntaxError(lineno)),
        }
    }

    Ok(Program { instructions, labels, entry: 0 })
}

fn parse_instruction(
    line: &str,
    lineno: usize,
    index: usize,
    fixups: &mut Vec<(usize, usize, String)>,
) -> Result<Instruction, AsmError> {
    let err = || AsmError::SyntaxError(lineno);
    let (mnemonic, rest) = match line.find(char::is_whitespace) {
        Some(pos) => (&line[..pos], line[pos..].trim()),
        None => (line, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let nops = |n: usize| if ops.len() == n { Ok(()) } else { Err(err()) };

    match mnemonic {
        "nop" => nops(0).map(|_| Instruction::Nop),
        "isb" => nops(0).map(|_| Instruction::Isb),
        "sb" => nops(0).map(|_| Instruction::Sb),
        "halt" => nops(0).map(|_| Instruction::Halt),
        "mov" => {
            nops(2)?;
            Ok(Instruction::Mov { dst: parse_reg(ops[0], lineno)?, imm: parse_imm(ops[1], lineno)? })
        }
        "orr" | "eor" => {
            nops(3)?;
            let (dst, a, b) =
                (parse_reg(ops[0], lineno)?, parse_reg(ops[1], lineno)?, parse_reg(ops[2], lineno)?);
            Ok(if mnemonic == "orr" {
                Instruction::Orr { dst, a, b }
            } else {
                Instruction::Eor { dst, a, b }
            })
        }
        "ldr" => {
            nops(2)?;
            Ok(Instruction::Ldr { dst: parse_reg(ops[0], lineno)?, addr: parse_mem(ops[1], lineno)? })
        }
        "str" => {
            nops(2)?;
            Ok(Instruction::Str { src: parse_reg(ops[0], lineno)?, addr: parse_mem(ops[1], lineno)? })
        }
        "beqz" => {
            nops(2)?;
            let cond = parse_reg(ops[0], lineno)?;
            if !is_label_name(ops[1]) {
                return Err(err());
            }
            fixups.push((lineno, index, ops[1].to_string()));
            Ok(Instruction::Beqz { cond, target: usize::MAX })
        }
        "jmp" => {
            nops(1)?;
            if !is_label_name(ops[0]) {
                return Err(err());
            }
            fixups.push((lineno, index, ops[0].to_string()));
            Ok(Instruction::Jmp { target: usize::MAX })
        }
        _ => Err(err()),
    }
}

fn parse_reg(tok: &str, lineno: usize) -> Result<Reg, AsmError> {
    let digits = tok.strip_prefix('x').ok_or(AsmError::SyntaxError(lineno))?;
    let n: u8 = digits.parse().map_err(|_| AsmError::SyntaxError(lineno))?;
    if n > Reg::MAX_INDEX {
        return Err(AsmError::SyntaxError(lineno));
    }
    Ok(Reg(n))
}

fn parse_mem(tok: &str, lineno: usize) -> Result<Reg, AsmError> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(AsmError::SyntaxError(lineno))?;
    parse_reg(inner.trim(), lineno)
}

fn parse_imm(tok: &str, lineno: usize) -> Result<u64, AsmError> {
    let digits = tok.strip_prefix('#').ok_or(AsmError::SyntaxError(lineno))?;
    let parsed = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        digits.parse()
    };
    parsed.map_err(|_| AsmError::SyntaxError(lineno))
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Render a [`Program`] as DSL text. Labels print on their own lines; branch
/// targets without a label get a canonical `L{index}` name, so disassembled
/// text always reassembles, and reassembly is a fixpoint.
pub fn disassemble(p: &Program) -> String {
    let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &idx) in &p.labels {
        by_index.entry(idx).or_default().push(name);
    }
    // Synthesize names for branch targets that have none.
    let mut synth: BTreeMap<usize, String> = BTreeMap::new();
    for instr in &p.instructions {
        if let Instruction::Beqz { target, .. } | Instruction::Jmp { target } = *instr {
            if !by_index.contains_key(&target) && !synth.contains_key(&target) {
                let mut name = format!("L{target}");
                while p.labels.contains_key(&name) {
                    name.push('_');
                }
                synth.insert(target, name);
            }
        }
    }
    let name_of = |target: usize| -> &str {
        by_index
            .get(&target)
            .map(|v| v[0])
            .or_else(|| synth.get(&target).map(String::as_str))
            .unwrap_or("L_invalid")
    };

    let mut out = String::new();
    for idx in 0..=p.instructions.len() {
        for name in by_index.get(&idx).into_iter().flatten() {
            out.push_str(name);
            out.push_str(":\n");
        }
        if let Some(name) = synth.get(&idx) {
            out.push_str(name);
            out.push_str(":\n");
        }
        let Some(instr) = p.instructions.get(idx) else { continue };
        let line = match *instr {
            Instruction::Nop => "nop".to_string(),
            Instruction::Isb => "isb".to_string(),
            Instruction::Sb => "sb".to_string(),
            Instruction::Halt => "halt".to_string(),
            Instruction::Mov { dst, imm } => format!("mov {dst}, #{imm}"),
            Instruction::Orr { dst, a, b } => format!("orr {dst}, {a}, {b}"),
            Instruction::Eor { dst, a, b } => format!("eor {dst}, {a}, {b}"),
            Instruction::Ldr { dst, addr } => format!("ldr {dst}, [{addr}]"),
            Instruction::Str { src, addr } => format!("str {src}, [{addr}]"),
            Instruction::Beqz { cond, target } => format!("beqz {cond}, {}", name_of(target)),
            Instruction::Jmp { target } => format!("jmp {}", name_of(target)),
        };
        out.push_str("    ");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_and_instruction_share_a_line() {
        let p = assemble("L0: beqz x1, L0").unwrap();
        assert_eq!(p.instructions, vec![Instruction::Beqz { cond: Reg(1), target: 0 }]);
        assert_eq!(p.labels["L0"], 0);
    }

    #[test]
    fn full_program_round_trips() {
        let text = "\
start:
    ldr x0, [x1]
    beqz x0, done
    orr x2, x3, x4
    mov x5, #0x1f
    str x5, [x2]
    jmp start
done:
    halt
";
        let p = assemble(text).unwrap();
        assert_eq!(p.instructions.len(), 7);
        assert_eq!(p.labels["done"], 6);
        let text2 = disassemble(&p);
        let p2 = assemble(&text2).unwrap();
        assert_eq!(p, p2);
        assert_eq!(disassemble(&p2), text2);
    }

    #[test]
    fn trailing_label_marks_program_end() {
        let p = assemble("beqz x0, end\nend:").unwrap();
        assert_eq!(p.instructions, vec![Instruction::Beqz { cond: Reg(0), target: 1 }]);
        assert_eq!(p.labels["end"], 1);
    }

    #[test]
    fn synthesized_labels_keep_branches_reassemblable() {
        let p = Program::new(vec![
            Instruction::Beqz { cond: Reg(0), target: 2 },
            Instruction::Nop,
            Instruction::Halt,
        ]);
        let text = disassemble(&p);
        let p2 = assemble(&text).unwrap();
        assert_eq!(p.instructions, p2.instructions);
        assert_eq!(p2.labels["L2"], 2);
    }

    #[test]
    fn duplicate_label_is_reported() {
        assert_eq!(
            assemble("a: nop\na: halt"),
            Err(AsmError::DuplicateLabel("a".to_string()))
        );
    }

    #[test]
    fn unresolved_label_is_reported() {
        assert_eq!(assemble("jmp nowhere"), Err(AsmError::UnresolvedLabel("nowhere".to_string())));
    }

    #[test]
    fn syntax_errors_carry_one_based_line_numbers() {
        assert_eq!(assemble("nop\nnop\nldr x0 x1"), Err(AsmError::SyntaxError(3)));
        assert_eq!(assemble("mov x0, 5"), Err(AsmError::SyntaxError(1)));
        assert_eq!(assemble("ldr x29, [x0]"), Err(AsmError::SyntaxError(1)));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let p = assemble("; header\n\n  nop ; trailing\nhalt").unwrap();
        assert_eq!(p.instructions.len(), 2);
    }
}
