//! Per-instruction symbolic semantics.
//!
//! Each executed instruction yields one record per operand: sources are
//! recorded after evaluation and before any destination overwrite, the
//! destination is recorded after. Unsupported mnemonics degrade gracefully
//! by clobbering their (conservatively estimated) definitions with fresh
//! variables.

use crate::asm::{
    is_call, is_cond_branch, is_ret, is_uncond_jump, render_operand, Instruction, Operand, Reg,
};
use crate::expr::{BinaryOp, FlagKind, SymExpr, UnaryOp};

use super::state::{Loc, MachineState};

/// What one operand of one executed instruction evaluated to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandRecord {
    pub text: String,
    pub expr: SymExpr,
    /// Simplified address expression, for memory operands.
    pub mem_addr: Option<SymExpr>,
    /// Location this operand names, when it names one; loop processing marks
    /// these with `ITER`.
    pub loc: Option<Loc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub operands: Vec<OperandRecord>,
    /// Snapshot of the ABI argument expressions at a `call`.
    pub call_args: Option<Vec<SymExpr>>,
    pub unsupported: bool,
}

impl StepOutcome {
    fn supported(operands: Vec<OperandRecord>) -> StepOutcome {
        StepOutcome {
            operands,
            call_args: None,
            unsupported: false,
        }
    }
}

fn mem_address(
    state: &mut MachineState,
    base: Option<Reg>,
    index: Option<Reg>,
    scale: u8,
    disp: i64,
) -> SymExpr {
    let mut terms: Vec<SymExpr> = Vec::new();
    if let Some(b) = base {
        terms.push(state.read_reg(b));
    }
    if let Some(i) = index {
        let reg = state.read_reg(i);
        terms.push(if scale == 1 {
            reg
        } else {
            SymExpr::binop(BinaryOp::Mul, SymExpr::num(i64::from(scale)), reg)
        });
    }
    if disp != 0 || terms.is_empty() {
        terms.push(SymExpr::disp(disp));
    }
    let mut iter = terms.into_iter();
    let first = iter.next().expect("memory operand has at least one term");
    let sum = iter.fold(first, |l, r| SymExpr::binop(BinaryOp::Add, l, r));
    state.simplify(&sum)
}

/// Evaluate an operand as a source. `resolved` carries the instruction's
/// resolved string when this operand is the one it belongs to.
fn eval_source(
    op: &Operand,
    resolved: Option<&str>,
    state: &mut MachineState,
) -> OperandRecord {
    let text = render_operand(op);
    match op {
        Operand::Register { reg, .. } => OperandRecord {
            text,
            expr: state.read_reg(*reg),
            mem_addr: None,
            loc: Some(Loc::Reg(*reg)),
        },
        Operand::Immediate(v) => OperandRecord {
            text,
            expr: match resolved {
                Some(s) => SymExpr::Str(s.to_string()),
                None => SymExpr::num(*v),
            },
            mem_addr: None,
            loc: None,
        },
        Operand::Label { .. } => OperandRecord {
            text,
            // A data reference through a symbol: use the resolved string
            // when available, otherwise an unused VAR for the unknown value.
            expr: match resolved {
                Some(s) => SymExpr::Str(s.to_string()),
                None => state.fresh_var(),
            },
            mem_addr: None,
            loc: None,
        },
        Operand::Memory {
            base,
            index,
            scale,
            disp,
            segment,
        } => {
            let addr = mem_address(state, *base, *index, *scale, *disp);
            let key = MachineState::mem_key(&addr, *segment);
            let expr = match resolved {
                Some(s) => SymExpr::Str(s.to_string()),
                None => state.read_mem(&addr, *segment),
            };
            OperandRecord {
                text,
                expr,
                mem_addr: Some(addr),
                loc: Some(Loc::Mem(key)),
            }
        }
    }
}

fn apply_write(state: &mut MachineState, rec: &OperandRecord, value: &SymExpr) {
    match &rec.loc {
        Some(Loc::Reg(r)) => state.write_reg(*r, value.clone()),
        Some(Loc::Mem(key)) => state.write_mem(key.clone(), value.clone()),
        None => {}
    }
}

/// The operand that the listing's resolved string belongs to: the first
/// label, else the first memory operand, else the first immediate.
fn string_operand_index(instr: &Instruction) -> Option<usize> {
    instr.resolved_string.as_ref()?;
    let by = |pred: fn(&Operand) -> bool| instr.operands.iter().position(pred);
    by(|o| matches!(o, Operand::Label { .. }))
        .or_else(|| by(|o| matches!(o, Operand::Memory { .. })))
        .or_else(|| by(|o| matches!(o, Operand::Immediate(_))))
}

pub fn symbolic_step(instr: &Instruction, state: &mut MachineState) -> StepOutcome {
    let ops = &instr.operands;
    let m = instr.mnemonic.as_str();
    let string_idx = string_operand_index(instr);
    let resolved = |i: usize| -> Option<&str> {
        (string_idx == Some(i))
            .then_some(instr.resolved_string.as_deref())
            .flatten()
    };

    // Register-target calls still classify as calls; handle all calls here.
    if is_call(m) {
        return step_call(instr, state, string_idx);
    }
    if is_uncond_jump(m) || is_cond_branch(m) {
        let operands = match ops.first() {
            Some(Operand::Label { addr, .. }) => vec![OperandRecord {
                text: render_operand(&ops[0]),
                expr: SymExpr::num(*addr as i64),
                mem_addr: None,
                loc: None,
            }],
            Some(op) => vec![eval_source(op, None, state)],
            None => Vec::new(),
        };
        return StepOutcome::supported(operands);
    }
    if is_ret(m) {
        return StepOutcome::supported(Vec::new());
    }

    match (m, ops.len()) {
        ("nop" | "endbr64" | "endbr32" | "hlt" | "pause", _) => {
            StepOutcome::supported(Vec::new())
        }
        ("mov" | "movabs", 2) => {
            let src = eval_source(&ops[1], resolved(1), state);
            let dst_probe = eval_dest_loc(&ops[0], state);
            apply_write(state, &dst_probe, &src.expr);
            let dst = OperandRecord {
                expr: src.expr.clone(),
                ..dst_probe
            };
            StepOutcome::supported(vec![dst, src])
        }
        ("lea", 2) => {
            if let Operand::Memory {
                base,
                index,
                scale,
                disp,
                ..
            } = &ops[1]
            {
                let addr = mem_address(state, *base, *index, *scale, *disp);
                let value = match resolved(1) {
                    Some(s) => SymExpr::Str(s.to_string()),
                    None => addr.clone(),
                };
                let src = OperandRecord {
                    text: render_operand(&ops[1]),
                    expr: value.clone(),
                    mem_addr: Some(addr),
                    loc: None,
                };
                let dst_probe = eval_dest_loc(&ops[0], state);
                apply_write(state, &dst_probe, &value);
                let dst = OperandRecord { expr: value, ..dst_probe };
                StepOutcome::supported(vec![dst, src])
            } else {
                unsupported_step(instr, state)
            }
        }
        ("add" | "sub" | "and" | "or" | "xor" | "shl" | "shr" | "sar" | "imul", 2) => {
            let op = match m {
                "add" => BinaryOp::Add,
                "sub" => BinaryOp::Sub,
                "and" => BinaryOp::And,
                "or" => BinaryOp::Or,
                "xor" => BinaryOp::Xor,
                "shl" => BinaryOp::Shl,
                "shr" => BinaryOp::Shr,
                "sar" => BinaryOp::Sar,
                _ => BinaryOp::Mul,
            };
            let src = eval_source(&ops[1], resolved(1), state);
            let old = eval_source(&ops[0], None, state);
            let value =
                state.simplify(&SymExpr::binop(op, old.expr.clone(), src.expr.clone()));
            apply_write(state, &old, &value);
            let dst = OperandRecord { expr: value, ..old };
            StepOutcome::supported(vec![dst, src])
        }
        ("imul", 3) => {
            let src = eval_source(&ops[1], resolved(1), state);
            let imm = eval_source(&ops[2], None, state);
            let value = state.simplify(&SymExpr::binop(
                BinaryOp::Mul,
                src.expr.clone(),
                imm.expr.clone(),
            ));
            let dst_probe = eval_dest_loc(&ops[0], state);
            apply_write(state, &dst_probe, &value);
            let dst = OperandRecord { expr: value, ..dst_probe };
            StepOutcome::supported(vec![dst, src, imm])
        }
        ("imul" | "mul", 1) => {
            // One-operand form: rdx:rax := rax * src. The low half keeps the
            // product, the high half becomes unknown.
            let src = eval_source(&ops[0], resolved(0), state);
            let rax = state.read_reg(Reg::Rax);
            let value = state.simplify(&SymExpr::binop(BinaryOp::Mul, rax, src.expr.clone()));
            state.write_reg(Reg::Rax, value);
            let high = state.fresh_var();
            state.write_reg(Reg::Rdx, high);
            StepOutcome::supported(vec![src])
        }
        ("inc" | "dec", 1) => {
            let op = if m == "inc" { BinaryOp::Add } else { BinaryOp::Sub };
            let old = eval_source(&ops[0], None, state);
            let value = state.simplify(&SymExpr::binop(op, old.expr.clone(), SymExpr::num(1)));
            apply_write(state, &old, &value);
            let dst = OperandRecord { expr: value, ..old };
            StepOutcome::supported(vec![dst])
        }
        ("neg" | "not", 1) => {
            let op = if m == "neg" { UnaryOp::Neg } else { UnaryOp::Not };
            let old = eval_source(&ops[0], None, state);
            let value = state.simplify(&SymExpr::unop(op, old.expr.clone()));
            apply_write(state, &old, &value);
            let dst = OperandRecord { expr: value, ..old };
            StepOutcome::supported(vec![dst])
        }
        ("push", 1) => {
            let src = eval_source(&ops[0], resolved(0), state);
            let rsp = state.read_reg(Reg::Rsp);
            let slot = state.simplify(&SymExpr::binop(BinaryOp::Sub, rsp, SymExpr::num(8)));
            state.write_reg(Reg::Rsp, slot.clone());
            state.write_mem(MachineState::mem_key(&slot, None), src.expr.clone());
            StepOutcome::supported(vec![src])
        }
        ("pop", 1) => {
            let rsp = state.read_reg(Reg::Rsp);
            let value = state.read_mem(&rsp, None);
            let next = state.simplify(&SymExpr::binop(BinaryOp::Add, rsp, SymExpr::num(8)));
            state.write_reg(Reg::Rsp, next);
            let dst_probe = eval_dest_loc(&ops[0], state);
            apply_write(state, &dst_probe, &value);
            let dst = OperandRecord { expr: value, ..dst_probe };
            StepOutcome::supported(vec![dst])
        }
        ("cmp" | "test", 2) => {
            let lhs = eval_source(&ops[0], resolved(0), state);
            let rhs = eval_source(&ops[1], resolved(1), state);
            state.set_last_compare(lhs.expr.clone(), rhs.expr.clone());
            StepOutcome::supported(vec![lhs, rhs])
        }
        ("sbb" | "adc", 2) => {
            let carry = state
                .last_compare()
                .map(|(l, r)| SymExpr::flag(FlagKind::Cf, l.clone(), r.clone()));
            let src = eval_source(&ops[1], resolved(1), state);
            let old = eval_source(&ops[0], None, state);
            let value = match carry {
                Some(cf) => {
                    let op = if m == "sbb" { BinaryOp::Sub } else { BinaryOp::Add };
                    let base = SymExpr::binop(op, old.expr.clone(), src.expr.clone());
                    state.simplify(&SymExpr::binop(op, base, cf))
                }
                None => state.fresh_var(),
            };
            apply_write(state, &old, &value);
            let dst = OperandRecord { expr: value, ..old };
            StepOutcome::supported(vec![dst, src])
        }
        ("cdq" | "cqo", 0) => {
            let v = state.fresh_var();
            state.write_reg(Reg::Rdx, v);
            StepOutcome::supported(Vec::new())
        }
        _ => unsupported_step(instr, state),
    }
}

/// Locate (and for memory, address) a pure destination without reading it.
fn eval_dest_loc(op: &Operand, state: &mut MachineState) -> OperandRecord {
    let text = render_operand(op);
    match op {
        Operand::Register { reg, .. } => OperandRecord {
            text,
            expr: SymExpr::num(0),
            mem_addr: None,
            loc: Some(Loc::Reg(*reg)),
        },
        Operand::Memory {
            base,
            index,
            scale,
            disp,
            segment,
        } => {
            let addr = mem_address(state, *base, *index, *scale, *disp);
            let key = MachineState::mem_key(&addr, *segment);
            OperandRecord {
                text,
                expr: SymExpr::num(0),
                mem_addr: Some(addr),
                loc: Some(Loc::Mem(key)),
            }
        }
        _ => OperandRecord {
            text,
            expr: SymExpr::num(0),
            mem_addr: None,
            loc: None,
        },
    }
}

fn step_call(
    instr: &Instruction,
    state: &mut MachineState,
    string_idx: Option<usize>,
) -> StepOutcome {
    let target = match instr.operands.first() {
        Some(Operand::Label { addr, .. }) => Some(OperandRecord {
            text: render_operand(&instr.operands[0]),
            expr: SymExpr::num(*addr as i64),
            mem_addr: None,
            loc: None,
        }),
        Some(op) => {
            let resolved = (string_idx == Some(0))
                .then_some(instr.resolved_string.as_deref())
                .flatten();
            Some(eval_source(op, resolved, state))
        }
        None => None,
    };
    let args = state.call_arguments();
    state.clear_args_written();
    let ret = state.fresh_var();
    state.write_reg(Reg::Rax, ret);
    StepOutcome {
        operands: target.into_iter().collect(),
        call_args: Some(args),
        unsupported: false,
    }
}

/// Conservative definition sets for mnemonics outside the modeled set.
fn clobbered_by(m: &str, ops: &[Operand]) -> Vec<Loc> {
    let first_reg = || -> Vec<Loc> {
        ops.first()
            .and_then(|o| match o {
                Operand::Register { reg, .. } => Some(Loc::Reg(*reg)),
                _ => None,
            })
            .into_iter()
            .collect()
    };
    if m.starts_with("cmov") || m.starts_with("set") {
        return first_reg();
    }
    match m {
        "movzx" | "movsx" | "movsxd" | "bsf" | "bsr" | "lzcnt" | "tzcnt" | "popcnt"
        | "bswap" | "rol" | "ror" | "rcl" | "rcr" => first_reg(),
        "xchg" | "xadd" => ops
            .iter()
            .filter_map(|o| match o {
                Operand::Register { reg, .. } => Some(Loc::Reg(*reg)),
                _ => None,
            })
            .collect(),
        "leave" => vec![Loc::Reg(Reg::Rbp), Loc::Reg(Reg::Rsp)],
        "cwde" | "cbw" | "cdqe" => vec![Loc::Reg(Reg::Rax)],
        "div" | "idiv" => vec![Loc::Reg(Reg::Rax), Loc::Reg(Reg::Rdx)],
        _ => ops
            .iter()
            .filter_map(|o| match o {
                Operand::Register { reg, .. } => Some(Loc::Reg(*reg)),
                _ => None,
            })
            .collect(),
    }
}

fn unsupported_step(instr: &Instruction, state: &mut MachineState) -> StepOutcome {
    let clobbered = clobbered_by(instr.mnemonic.as_str(), &instr.operands);
    let mut operands = Vec::with_capacity(instr.operands.len());
    for op in &instr.operands {
        let mut rec = eval_source(op, None, state);
        if let Some(loc) = &rec.loc {
            if clobbered.contains(loc) {
                let fresh = state.fresh_var();
                match loc {
                    Loc::Reg(r) => state.write_reg(*r, fresh.clone()),
                    Loc::Mem(key) => state.write_mem(key.clone(), fresh.clone()),
                }
                rec.expr = fresh;
            }
        }
        operands.push(rec);
    }
    // Clobbered locations that never appear as operands (leave, cdqe, ...).
    for loc in &clobbered {
        if let Loc::Reg(r) = loc {
            let named = instr.operands.iter().any(
                |o| matches!(o, Operand::Register { reg, .. } if reg == r),
            );
            if !named {
                let fresh = state.fresh_var();
                state.write_reg(*r, fresh);
            }
        }
    }
    StepOutcome {
        operands,
        call_args: None,
        unsupported: true,
    }
}
