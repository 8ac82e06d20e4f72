//! Key instructions and their typed key expressions.
//!
//! Four kinds carry a function's major behavior: calling behavior,
//! comparing manner, indirect branch, and memory store. Each key
//! instruction's operands translate into a key expression whose
//! sub-expressions are fully simplified.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{is_call, is_cond_branch, is_ret, is_uncond_jump, Instruction, Operand};
use crate::expr::SymExpr;
use crate::symexec::InstrRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    CallingBehavior,
    ComparingManner,
    IndirectBranch,
    MemoryStore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyExpr {
    /// `RET_<callee>(arg1, ..., argn)`; the callee label is display-only and
    /// never contributes tokens.
    Call { callee: String, args: Vec<SymExpr> },
    /// `lhs cmp rhs` (both `cmp` and `test` canonicalize to `cmp`).
    Compare { lhs: SymExpr, rhs: SymExpr },
    /// `branch dest`
    Branch { dest: SymExpr },
    /// `[addr] = value`
    Store { addr: SymExpr, value: SymExpr },
}

impl KeyExpr {
    pub fn kind(&self) -> KeyKind {
        match self {
            KeyExpr::Call { .. } => KeyKind::CallingBehavior,
            KeyExpr::Compare { .. } => KeyKind::ComparingManner,
            KeyExpr::Branch { .. } => KeyKind::IndirectBranch,
            KeyExpr::Store { .. } => KeyKind::MemoryStore,
        }
    }
}

impl fmt::Display for KeyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyExpr::Call { callee, args } => {
                let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                write!(f, "RET_{callee}({})", args.join(", "))
            }
            KeyExpr::Compare { lhs, rhs } => write!(f, "{lhs} cmp {rhs}"),
            KeyExpr::Branch { dest } => write!(f, "branch {dest}"),
            KeyExpr::Store { addr, value } => write!(f, "[{addr}] = {value}"),
        }
    }
}

/// Mnemonics that write their first operand when it is a memory operand.
fn writes_first_operand(m: &str) -> bool {
    matches!(
        m,
        "mov" | "movabs" | "add" | "sub" | "and" | "or" | "xor" | "inc" | "dec" | "shl"
            | "shr" | "sar" | "neg" | "not" | "adc" | "sbb"
    )
}

/// Classify an instruction. Total and pure; `None` means non-key.
///
/// A register-target call is both a call and an indirect branch; it
/// classifies as calling behavior (with a symbolic callee) because calls
/// keep their argument expressions.
pub fn classify(instr: &Instruction) -> Option<KeyKind> {
    let m = instr.mnemonic.as_str();
    if is_call(m) {
        return Some(KeyKind::CallingBehavior);
    }
    if m == "cmp" || m == "test" {
        return Some(KeyKind::ComparingManner);
    }
    if is_uncond_jump(m) {
        if let Some(op) = instr.operands.first() {
            if op.is_register() || op.is_memory() {
                return Some(KeyKind::IndirectBranch);
            }
        }
        return None;
    }
    if is_cond_branch(m) || is_ret(m) {
        return None;
    }
    if writes_first_operand(m) && instr.operands.first().is_some_and(Operand::is_memory) {
        return Some(KeyKind::MemoryStore);
    }
    None
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("instruction at {address:#x} has no execution record (unreachable?)")]
    MissingRecord { address: u64 },
    #[error("instruction at {address:#x}: malformed {kind:?} record")]
    Malformed { address: u64, kind: KeyKind },
}

/// Translate a classified key instruction into its key expression, using the
/// final (ITER-marked) operand records of the traversal.
pub fn translate(
    instr: &Instruction,
    kind: KeyKind,
    record: Option<&InstrRecord>,
) -> Result<KeyExpr, TranslateError> {
    let address = instr.address;
    let record = record.ok_or(TranslateError::MissingRecord { address })?;
    let malformed = || TranslateError::Malformed { address, kind };

    match kind {
        KeyKind::ComparingManner => {
            let lhs = record.final_operands.first().ok_or_else(malformed)?;
            let rhs = record.final_operands.get(1).ok_or_else(malformed)?;
            Ok(KeyExpr::Compare {
                lhs: lhs.expr.clone(),
                rhs: rhs.expr.clone(),
            })
        }
        KeyKind::IndirectBranch => {
            let dest = record.final_operands.first().ok_or_else(malformed)?;
            Ok(KeyExpr::Branch {
                dest: dest.expr.clone(),
            })
        }
        KeyKind::MemoryStore => {
            let target = record.final_operands.first().ok_or_else(malformed)?;
            let addr = target.mem_addr.clone().ok_or_else(malformed)?;
            Ok(KeyExpr::Store {
                addr,
                value: target.expr.clone(),
            })
        }
        KeyKind::CallingBehavior => {
            let callee = match instr.operands.first() {
                Some(Operand::Label { name: Some(n), .. }) => n.clone(),
                Some(Operand::Label { addr, name: None }) => format!("0x{addr:x}"),
                Some(_) => "INDIRECT".to_string(),
                None => return Err(malformed()),
            };
            Ok(KeyExpr::Call {
                callee,
                args: record.final_call_args.clone().unwrap_or_default(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{build_cfg, parse_listing};
    use crate::symexec::traverse;

    fn instr(mnemonic: &str, ops: &[&str]) -> Instruction {
        let ops_json: Vec<String> = ops.iter().map(|o| format!("\"{o}\"")).collect();
        let json = format!(
            r#"{{"binary":"t","functions":[{{"name":"f","entry":0,"instructions":[{{"addr":0,"mnemonic":"{mnemonic}","ops":[{}]}}]}}]}}"#,
            ops_json.join(",")
        );
        parse_listing(&json).unwrap().functions.remove(0).instructions.remove(0)
    }

    #[test]
    fn classify_paper_examples() {
        assert_eq!(
            classify(&instr("call", &["0x4fb567e"])),
            Some(KeyKind::CallingBehavior)
        );
        assert_eq!(
            classify(&instr("jmp", &["eax"])),
            Some(KeyKind::IndirectBranch)
        );
        assert_eq!(
            classify(&instr("mov", &["[edx]", "ebx"])),
            Some(KeyKind::MemoryStore)
        );
        assert_eq!(
            classify(&instr("cmp", &["eax", "5"])),
            Some(KeyKind::ComparingManner)
        );
        assert_eq!(
            classify(&instr("test", &["rax", "rax"])),
            Some(KeyKind::ComparingManner)
        );
    }

    #[test]
    fn classify_non_keys() {
        assert_eq!(classify(&instr("mov", &["eax", "5"])), None);
        assert_eq!(classify(&instr("jmp", &["0x10"])), None);
        assert_eq!(classify(&instr("jle", &["0x10"])), None);
        assert_eq!(classify(&instr("ret", &[])), None);
        assert_eq!(classify(&instr("add", &["eax", "[rbx]"])), None);
        // loads are not stores
        assert_eq!(classify(&instr("mov", &["eax", "[rbx]"])), None);
    }

    #[test]
    fn indirect_call_is_calling_behavior_with_symbolic_callee() {
        let i = instr("call", &["rax"]);
        assert_eq!(classify(&i), Some(KeyKind::CallingBehavior));
    }

    fn keys_of(json: &str) -> Vec<(u64, KeyExpr)> {
        let p = parse_listing(json).unwrap();
        let f = &p.functions[0];
        let cfg = build_cfg(f);
        let record = traverse(f, &cfg, 1000);
        f.instructions
            .iter()
            .filter_map(|i| {
                classify(i).map(|kind| {
                    let key =
                        translate(i, kind, record.entries.get(&i.address)).expect("translates");
                    (i.address, key)
                })
            })
            .collect()
    }

    #[test]
    fn translate_compare_display() {
        let keys = keys_of(
            r#"{"binary":"t","functions":[{"name":"f","entry":0,"instructions":[
                {"addr":0,"mnemonic":"mov","ops":["eax","edi"]},
                {"addr":1,"mnemonic":"cmp","ops":["eax","5"]},
                {"addr":2,"mnemonic":"ret","ops":[]}
            ]}]}"#,
        );
        assert_eq!(keys[0].1.to_string(), "VAR0 cmp 5");
    }

    #[test]
    fn translate_call_argument_rule() {
        // mov esi,9 ; mov edi,ecx (ecx = 1) ; call subFunc  =>  RET_subFunc(1, 9)
        let keys = keys_of(
            r#"{"binary":"t","functions":[{"name":"f","entry":0,"instructions":[
                {"addr":0,"mnemonic":"mov","ops":["ecx","1"]},
                {"addr":1,"mnemonic":"mov","ops":["esi","9"]},
                {"addr":2,"mnemonic":"mov","ops":["edi","ecx"]},
                {"addr":3,"mnemonic":"call","ops":["subFunc"]},
                {"addr":4,"mnemonic":"ret","ops":[]}
            ]}]}"#,
        );
        assert_eq!(keys[0].1.to_string(), "RET_subFunc(1, 9)");
    }

    #[test]
    fn translate_store_display() {
        let keys = keys_of(
            r#"{"binary":"t","functions":[{"name":"f","entry":0,"instructions":[
                {"addr":0,"mnemonic":"mov","ops":["[rbp-0x48]","rdx"]},
                {"addr":1,"mnemonic":"ret","ops":[]}
            ]}]}"#,
        );
        assert_eq!(keys[0].1.to_string(), "[VAR6-0x48] = VAR2");
    }

    #[test]
    fn translate_indirect_branch() {
        let keys = keys_of(
            r#"{"binary":"t","functions":[{"name":"f","entry":0,"instructions":[
                {"addr":0,"mnemonic":"jmp","ops":["rdi"]}
            ]}]}"#,
        );
        assert_eq!(keys[0].1.to_string(), "branch VAR0");
    }

    #[test]
    fn translate_output_is_already_simplified() {
        let keys = keys_of(
            r#"{"binary":"t","functions":[{"name":"f","entry":0,"instructions":[
                {"addr":0,"mnemonic":"mov","ops":["eax","edi"]},
                {"addr":1,"mnemonic":"add","ops":["eax","4"]},
                {"addr":2,"mnemonic":"sub","ops":["eax","4"]},
                {"addr":3,"mnemonic":"cmp","ops":["eax","5"]},
                {"addr":4,"mnemonic":"mov","ops":["[rbx+rcx*2+8]","eax"]},
                {"addr":5,"mnemonic":"ret","ops":[]}
            ]}]}"#,
        );
        use crate::simplify::simplify;
        for (_, key) in &keys {
            match key {
                KeyExpr::Compare { lhs, rhs } => {
                    assert_eq!(&simplify(lhs), lhs);
                    assert_eq!(&simplify(rhs), rhs);
                }
                KeyExpr::Store { addr, value } => {
                    assert_eq!(&simplify(addr), addr);
                    assert_eq!(&simplify(value), value);
                }
                _ => {}
            }
        }
        // the add/sub pair cancels before translation
        assert_eq!(keys[0].1.to_string(), "VAR0 cmp 5");
    }

    #[test]
    fn missing_record_is_an_error() {
        let i = instr("cmp", &["eax", "5"]);
        assert!(matches!(
            translate(&i, KeyKind::ComparingManner, None),
            Err(TranslateError::MissingRecord { .. })
        ));
    }
}
