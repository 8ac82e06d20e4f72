//! Front end for Intel-syntax objdump text (`objdump -d -M intel`).

use super::{
    parse_operand, resolve_symbolic_labels, takes_code_target, Function, Instruction, Program,
};

// Standalone segment tokens show up in alignment padding (`cs nop WORD ...`).
const PREFIXES: &[&str] = &[
    "lock", "rep", "repz", "repe", "repne", "repnz", "bnd", "notrack", "data16", "addr32",
    "cs", "ds", "es", "fs", "gs", "ss",
];

/// Parse objdump disassembly text. Never fails outright: unusable lines are
/// skipped and reported through the returned warnings; an input without any
/// `<symbol>:` function labels yields an empty program plus a warning.
pub fn parse_objdump(text: &str) -> (Program, Vec<String>) {
    let mut warnings = Vec::new();
    let mut functions: Vec<Function> = Vec::new();
    let mut current: Option<(u64, String, Vec<Instruction>)> = None;

    let flush =
        |current: &mut Option<(u64, String, Vec<Instruction>)>, warnings: &mut Vec<String>| {
            if let Some((label_addr, name, instructions)) = current.take() {
                if instructions.is_empty() {
                    warnings.push(format!("function {name}: no instructions, dropped"));
                    return None;
                }
                let entry = instructions[0].address;
                if entry != label_addr {
                    warnings.push(format!(
                        "function {name}: entry moved from {label_addr:#x} to first instruction {entry:#x}"
                    ));
                }
                Some(Function {
                    name: Some(name),
                    entry,
                    instructions,
                })
            } else {
                None
            }
        };

    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty()
            || trimmed.starts_with("Disassembly of section")
            || trimmed.contains("file format")
            || trimmed == "..."
        {
            continue;
        }

        // Function label: `0000000000401000 <main>:`
        if let Some(stripped) = trimmed.strip_suffix(":") {
            if let Some((addr_text, sym)) = stripped.split_once(" <") {
                if let (Ok(addr), Some(name)) = (
                    u64::from_str_radix(addr_text.trim(), 16),
                    sym.strip_suffix('>'),
                ) {
                    if let Some(f) = flush(&mut current, &mut warnings) {
                        functions.push(f);
                    }
                    current = Some((addr, name.to_string(), Vec::new()));
                    continue;
                }
            }
        }

        // Instruction line: `  401000:\t55                \tpush   rbp`
        let Some((addr_text, rest)) = trimmed.split_once(':') else {
            continue;
        };
        let Ok(address) = u64::from_str_radix(addr_text.trim(), 16) else {
            continue;
        };
        let Some((_, name, instructions)) = current.as_mut() else {
            warnings.push(format!("instruction at {address:#x} outside any function, skipped"));
            continue;
        };

        let rest = rest.split('#').next().unwrap_or("");
        // Skip the hex byte column, tolerant of tabs vs. spaces.
        let mut tokens = rest.split_whitespace().peekable();
        while let Some(tok) = tokens.peek() {
            let is_bytes = tok.len() == 2 && tok.chars().all(|c| c.is_ascii_hexdigit());
            if is_bytes {
                tokens.next();
            } else {
                break;
            }
        }
        let mut words: Vec<&str> = tokens.collect();
        while let Some(first) = words.first() {
            if PREFIXES.contains(&first.to_ascii_lowercase().as_str()) {
                words.remove(0);
            } else {
                break;
            }
        }
        if words.is_empty() {
            warnings.push(format!("{name}: data in text at {address:#x}, skipped"));
            continue;
        }
        if let Some(last) = instructions.last() {
            if address <= last.address {
                warnings.push(format!(
                    "{name}: non-increasing address {address:#x}, instruction skipped"
                ));
                continue;
            }
        }

        let mnemonic = normalize_mnemonic(&words[0].to_ascii_lowercase());
        let operand_text = words[1..].join(" ");
        let mut operands = Vec::new();
        let mut unparsed = false;
        if !operand_text.is_empty() {
            let code_target = takes_code_target(&mnemonic);
            for (i, part) in operand_text.split(',').enumerate() {
                match parse_operand(part, code_target && i == 0, true) {
                    Ok(op) => operands.push(op),
                    Err(e) => {
                        warnings.push(format!("{name} at {address:#x}: {e}"));
                        operands.clear();
                        unparsed = true;
                        break;
                    }
                }
            }
        }
        instructions.push(Instruction {
            address,
            mnemonic: mnemonic.to_string(),
            operands,
            resolved_string: None,
            raw_text: trimmed.to_string(),
            unparsed_operands: unparsed,
        });
    }
    if let Some(f) = flush(&mut current, &mut warnings) {
        functions.push(f);
    }

    if functions.is_empty() {
        warnings.push("no function labels recognized; empty program".to_string());
    }
    let mut program = Program {
        binary: String::new(),
        functions,
    };
    resolve_symbolic_labels(&mut program);
    (program, warnings)
}

fn normalize_mnemonic(m: &str) -> String {
    match m {
        "callq" => "call",
        "retq" => "ret",
        "jmpq" => "jmp",
        "leaveq" => "leave",
        other => other,
    }
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{Operand, Reg};

    const SAMPLE: &str = "\
a.out:     file format elf64-x86-64

Disassembly of section .text:

0000000000401000 <first>:
  401000:\t55                   \tpush   rbp
  401001:\t48 89 e5             \tmov    rbp,rsp
  401004:\tc3                   \tret

0000000000401005 <second>:
  401005:\tb8 05 00 00 00       \tmov    eax,0x5
  40100a:\tc3                   \tret
";

    #[test]
    fn two_functions_with_counts() {
        let (p, warnings) = parse_objdump(SAMPLE);
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(p.functions.len(), 2);
        assert_eq!(p.functions[0].instructions.len(), 3);
        assert_eq!(p.functions[1].instructions.len(), 2);
        assert_eq!(p.functions[0].name.as_deref(), Some("first"));
    }

    #[test]
    fn push_rbp_parses() {
        let (p, _) = parse_objdump(SAMPLE);
        let i = &p.functions[0].instructions[0];
        assert_eq!(i.address, 0x401000);
        assert_eq!(i.mnemonic, "push");
        assert_eq!(i.operands, vec![Operand::Register { reg: Reg::Rbp, width: 64 }]);
    }

    #[test]
    fn branch_targets_are_bare_hex() {
        let text = "\
0000000000001000 <f>:
  1000:\t74 02             \tje     1016 <f+0x16>
  1002:\tff d0             \tcall   rax
  1016:\tc3                \tret
";
        let (p, _) = parse_objdump(text);
        let ops = &p.functions[0].instructions[0].operands;
        assert_eq!(ops[0], Operand::Label { addr: 0x1016, name: None });
        // register call target stays a register operand
        assert_eq!(
            p.functions[0].instructions[1].operands[0],
            Operand::Register { reg: Reg::Rax, width: 64 }
        );
    }

    #[test]
    fn headers_only_yields_empty_program_and_warning() {
        let (p, warnings) = parse_objdump("Disassembly of section .text:\n");
        assert!(p.functions.is_empty());
        assert!(warnings.iter().any(|w| w.contains("no function labels")));
    }

    #[test]
    fn data_in_text_skipped_with_warning() {
        let text = "\
0000000000001000 <f>:
  1000:\t00 01
  1002:\tc3                \tret
";
        let (p, warnings) = parse_objdump(text);
        assert_eq!(p.functions[0].instructions.len(), 1);
        assert!(warnings.iter().any(|w| w.contains("data in text")));
        // entry follows the first real instruction
        assert_eq!(p.functions[0].entry, 0x1002);
    }
}
