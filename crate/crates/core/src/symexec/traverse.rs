//! Complete instruction traversal: a depth-first walk that executes every
//! reachable instruction at least once (instruction coverage, not path
//! coverage). Revisiting a node that sits on the current DFS stack detects a
//! loop; the loop path is re-executed exactly once and operands whose
//! expressions changed between the two passes are marked `ITER(initial)`.

use std::collections::{BTreeMap, HashSet};

use crate::asm::{is_call, is_cond_branch, is_ret, is_uncond_jump, Cfg, Function};
use crate::expr::SymExpr;

use super::state::{Loc, MachineState};
use super::step::{symbolic_step, OperandRecord, StepOutcome};

/// Execution record of one instruction: the first pass, the optional second
/// pass from loop processing, and the final (possibly ITER-marked) operand
/// expressions the key-expression translation consumes.
#[derive(Debug, Clone)]
pub struct InstrRecord {
    pub pass1: StepOutcome,
    pub pass2: Option<StepOutcome>,
    pub final_operands: Vec<OperandRecord>,
    pub final_call_args: Option<Vec<SymExpr>>,
}

impl InstrRecord {
    fn new(pass1: StepOutcome) -> InstrRecord {
        InstrRecord {
            final_operands: pass1.operands.clone(),
            final_call_args: pass1.call_args.clone(),
            pass2: None,
            pass1,
        }
    }

    pub fn unsupported(&self) -> bool {
        self.pass1.unsupported
    }
}

#[derive(Debug, Clone)]
pub struct LoopInfo {
    pub header: u64,
    pub latch: u64,
    pub path_len: usize,
    pub body_len: usize,
    pub irreducible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TraversalRecord {
    /// Address -> execution record, for every reachable instruction.
    pub entries: BTreeMap<u64, InstrRecord>,
    /// Total symbolic execution steps taken (pass 1 + loop re-executions).
    pub steps: usize,
    pub loops: Vec<LoopInfo>,
    pub unreachable: Vec<u64>,
    pub diagnostics: Vec<String>,
    pub simplify_budget_exhaustions: u32,
    /// Expressions that outgrew the node cap and degraded to fresh unknowns.
    pub oversize_replacements: u32,
}

/// Instruction-level successors, lowest address first so branch exploration
/// order is deterministic across runs.
fn children(f: &Function, idx: usize) -> Vec<usize> {
    let ins = &f.instructions[idx];
    let m = ins.mnemonic.as_str();
    let next = (idx + 1 < f.instructions.len()).then_some(idx + 1);
    let target = ins.label_target().and_then(|t| f.index_of(t));
    let mut out = Vec::with_capacity(2);
    if is_ret(m) {
        // no successors
    } else if is_uncond_jump(m) {
        if let Some(t) = target {
            out.push(t);
        }
    } else if is_cond_branch(m) {
        if let Some(t) = target {
            out.push(t);
        }
        if let Some(n) = next {
            out.push(n);
        }
        out.sort_unstable();
        out.dedup();
    } else {
        // calls fall through; external targets are exits
        let _ = is_call(m);
        if let Some(n) = next {
            out.push(n);
        }
    }
    out
}

pub fn traverse(f: &Function, _cfg: &Cfg, simplify_budget: u32) -> TraversalRecord {
    let n = f.instructions.len();
    let mut record = TraversalRecord::default();
    if n == 0 {
        return record;
    }

    let mut state = MachineState::new(simplify_budget);
    state.seed_arguments();

    let kids: Vec<Vec<usize>> = (0..n).map(|i| children(f, i)).collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, cs) in kids.iter().enumerate() {
        for &c in cs {
            preds[c].push(i);
        }
    }

    let mut executed = vec![false; n];
    let mut on_stack = vec![false; n];
    let mut path: Vec<usize> = Vec::new();
    // (instruction index, next child position)
    let mut frames: Vec<(usize, usize)> = Vec::new();
    let mut idom_cache: Option<Dominators> = None;

    let execute = |idx: usize,
                       state: &mut MachineState,
                       record: &mut TraversalRecord,
                       executed: &mut Vec<bool>| {
        let out = symbolic_step(&f.instructions[idx], state);
        record.steps += 1;
        executed[idx] = true;
        if out.unsupported {
            record
                .diagnostics
                .push(format!(
                    "unsupported mnemonic `{}` at {:#x}",
                    f.instructions[idx].mnemonic, f.instructions[idx].address
                ));
        }
        record
            .entries
            .insert(f.instructions[idx].address, InstrRecord::new(out));
    };

    execute(0, &mut state, &mut record, &mut executed);
    on_stack[0] = true;
    path.push(0);
    frames.push((0, 0));

    while let Some(&mut (idx, ref mut child_pos)) = frames.last_mut() {
        let cs = &kids[idx];
        if *child_pos >= cs.len() {
            frames.pop();
            on_stack[idx] = false;
            path.pop();
            continue;
        }
        let child = cs[*child_pos];
        *child_pos += 1;

        if !executed[child] {
            execute(child, &mut state, &mut record, &mut executed);
            on_stack[child] = true;
            path.push(child);
            frames.push((child, 0));
        } else if on_stack[child] {
            // Back edge idx -> child: process the loop once, lightweight.
            let dom = idom_cache.get_or_insert_with(|| Dominators::compute(&kids, &preds, n));
            process_loop(
                f,
                child,
                idx,
                &path,
                &preds,
                dom,
                &mut state,
                &mut record,
            );
        }
        // Executed non-loop node: return immediately (no repeated execution).
    }

    record.unreachable = (0..n)
        .filter(|&i| !executed[i])
        .map(|i| f.instructions[i].address)
        .collect();
    if !record.unreachable.is_empty() {
        record.diagnostics.push(format!(
            "{} unreachable instruction(s), first at {:#x}",
            record.unreachable.len(),
            record.unreachable[0]
        ));
    }
    record.simplify_budget_exhaustions = state.budget_exhaustions;
    record.oversize_replacements = state.oversize_replacements;
    if state.oversize_replacements > 0 {
        record.diagnostics.push(format!(
            "{} oversized expression(s) degraded to fresh unknowns",
            state.oversize_replacements
        ));
    }
    record
}

#[allow(clippy::too_many_arguments)]
fn process_loop(
    f: &Function,
    header: usize,
    latch: usize,
    path: &[usize],
    preds: &[Vec<usize>],
    dom: &Dominators,
    state: &mut MachineState,
    record: &mut TraversalRecord,
) {
    let header_addr = f.instructions[header].address;
    let latch_addr = f.instructions[latch].address;

    // A back edge whose target does not dominate its source is an
    // irreducible second entry into the body: plain revisit.
    if !dom.dominates(header, latch) {
        record.diagnostics.push(format!(
            "irreducible loop: back edge {latch_addr:#x} -> {header_addr:#x} skipped"
        ));
        record.loops.push(LoopInfo {
            header: header_addr,
            latch: latch_addr,
            path_len: 0,
            body_len: 0,
            irreducible: true,
        });
        return;
    }

    let pos = path
        .iter()
        .position(|&i| i == header)
        .expect("loop header is on the DFS stack");
    let loop_path = &path[pos..];
    let body_len = natural_loop_size(header, latch, preds);

    // Second pass: re-execute the same path, recording pass-2 expressions.
    for &idx in loop_path {
        let out = symbolic_step(&f.instructions[idx], state);
        record.steps += 1;
        if let Some(entry) = record.entries.get_mut(&f.instructions[idx].address) {
            entry.pass2 = Some(out);
        }
    }

    // Mark every operand whose simplified expression changed between the two
    // passes: its recorded expression becomes ITER(pass-1 expression), and
    // the first change per location rewrites the machine state so subsequent
    // execution continues with the loop-counter marking.
    let mut marked: HashSet<Loc> = HashSet::new();
    for &idx in loop_path {
        let addr = f.instructions[idx].address;
        let Some(entry) = record.entries.get_mut(&addr) else {
            continue;
        };
        let Some(pass2) = entry.pass2.clone() else {
            continue;
        };
        for (i, (op1, op2)) in entry.pass1.operands.iter().zip(&pass2.operands).enumerate() {
            if op1.expr == op2.expr || op1.expr.is_iter() {
                continue;
            }
            let Some(loc) = &op1.loc else { continue };
            if op1.loc != op2.loc {
                // The cell itself moved (e.g. a bumped pointer); the address
                // register gets marked through its own records instead.
                continue;
            }
            let iter_expr = SymExpr::iter(op1.expr.clone());
            entry.final_operands[i].expr = iter_expr.clone();
            if marked.insert(loc.clone()) {
                state.set_loc(loc, iter_expr);
            }
        }
        if let (Some(args1), Some(args2)) = (&entry.pass1.call_args, &pass2.call_args) {
            let mut final_args = entry.final_call_args.clone().unwrap_or_default();
            for (i, (a1, a2)) in args1.iter().zip(args2).enumerate() {
                if a1 != a2 && !a1.is_iter() {
                    final_args[i] = SymExpr::iter(a1.clone());
                }
            }
            entry.final_call_args = Some(final_args);
        }
    }

    record.loops.push(LoopInfo {
        header: header_addr,
        latch: latch_addr,
        path_len: loop_path.len(),
        body_len,
        irreducible: false,
    });
}

fn natural_loop_size(header: usize, latch: usize, preds: &[Vec<usize>]) -> usize {
    let mut body = HashSet::from([header]);
    let mut stack = vec![latch];
    while let Some(m) = stack.pop() {
        if body.insert(m) {
            stack.extend(preds[m].iter().copied());
        }
    }
    body.len()
}

/// Iterative dominator computation (Cooper-Harvey-Kennedy) over the
/// instruction-level graph.
struct Dominators {
    idom: Vec<Option<usize>>,
    rpo_number: Vec<Option<usize>>,
}

impl Dominators {
    fn compute(kids: &[Vec<usize>], preds: &[Vec<usize>], n: usize) -> Dominators {
        // Reverse postorder from the entry.
        let mut rpo = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        seen[0] = true;
        while let Some(&mut (u, ref mut ci)) = stack.last_mut() {
            if *ci < kids[u].len() {
                let c = kids[u][*ci];
                *ci += 1;
                if !seen[c] {
                    seen[c] = true;
                    stack.push((c, 0));
                }
            } else {
                rpo.push(u);
                stack.pop();
            }
        }
        rpo.reverse();

        let mut rpo_number = vec![None; n];
        for (i, &u) in rpo.iter().enumerate() {
            rpo_number[u] = Some(i);
        }
        let mut idom: Vec<Option<usize>> = vec![None; n];
        idom[0] = Some(0);
        let mut changed = true;
        while changed {
            changed = false;
            for &u in rpo.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for &p in &preds[u] {
                    if rpo_number[p].is_none() || idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, &rpo_number, cur, p),
                    });
                }
                if new_idom.is_some() && idom[u] != new_idom {
                    idom[u] = new_idom;
                    changed = true;
                }
            }
        }
        Dominators { idom, rpo_number }
    }

    fn dominates(&self, a: usize, mut b: usize) -> bool {
        if self.rpo_number[a].is_none() || self.rpo_number[b].is_none() {
            return false;
        }
        loop {
            if b == a {
                return true;
            }
            match self.idom[b] {
                Some(i) if i != b => b = i,
                _ => return false,
            }
        }
    }
}

fn intersect(
    idom: &[Option<usize>],
    rpo_number: &[Option<usize>],
    mut a: usize,
    mut b: usize,
) -> usize {
    while a != b {
        while rpo_number[a] > rpo_number[b] {
            a = idom[a].expect("processed node has an idom");
        }
        while rpo_number[b] > rpo_number[a] {
            b = idom[b].expect("processed node has an idom");
        }
    }
    a
}

/// Debug dump in the `addr: mnemonic ops ; 1st: e1,e2 [; 2nd: e1,e2]` style.
pub fn dump_record(f: &Function, record: &TraversalRecord) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for ins in &f.instructions {
        let Some(entry) = record.entries.get(&ins.address) else {
            let _ = writeln!(out, "{:x}: {} ; unreachable", ins.address, ins.raw_text);
            continue;
        };
        let ops = ins
            .operands
            .iter()
            .map(crate::asm::render_operand)
            .collect::<Vec<_>>()
            .join(", ");
        let _ = write!(
            out,
            "{:x}: {}{}{}",
            ins.address,
            ins.mnemonic,
            if ops.is_empty() { "" } else { " " },
            ops
        );
        let exprs = |o: &StepOutcome| {
            o.operands
                .iter()
                .map(|r| r.expr.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        if !entry.pass1.operands.is_empty() {
            let _ = write!(out, " ; 1st: {}", exprs(&entry.pass1));
        }
        if let Some(p2) = &entry.pass2 {
            if !p2.operands.is_empty() {
                let _ = write!(out, " ; 2nd: {}", exprs(p2));
            }
        }
        out.push('\n');
    }
    out
}
