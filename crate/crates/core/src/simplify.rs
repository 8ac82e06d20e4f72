//! Bounded rewrite-rule simplification of symbolic expressions.
//!
//! Normal form: constants folded, neutral/annihilating elements removed,
//! associative-commutative chains flattened and sorted (numbers first in the
//! tree; display prints them last), subtraction of a constant folded into the
//! sum, and the mixed-boolean-arithmetic identities rewritten to their short
//! forms. Running the simplifier twice equals running it once.

use crate::expr::{BinaryOp, NumStyle, SymExpr, UnaryOp};

pub const DEFAULT_RULE_BUDGET: u32 = 1000;

struct Budget {
    remaining: u32,
    exhausted: bool,
}

impl Budget {
    fn charge(&mut self) -> bool {
        if self.remaining == 0 {
            self.exhausted = true;
            return false;
        }
        self.remaining -= 1;
        true
    }

    fn ok(&self) -> bool {
        !self.exhausted
    }
}

/// Simplify with the default rule budget.
pub fn simplify(e: &SymExpr) -> SymExpr {
    simplify_with_budget(e, DEFAULT_RULE_BUDGET).0
}

/// Simplify with an explicit rule budget. The second component reports
/// whether the budget ran out (the expression is returned as far as it got;
/// the rewrite never loops forever).
pub fn simplify_with_budget(e: &SymExpr, budget: u32) -> (SymExpr, bool) {
    let mut b = Budget {
        remaining: budget,
        exhausted: false,
    };
    let out = simplify_rec(e, &mut b);
    (out, b.exhausted)
}

fn simplify_rec(e: &SymExpr, b: &mut Budget) -> SymExpr {
    if !b.ok() {
        return e.clone();
    }
    let rebuilt = match e {
        SymExpr::Num(..) | SymExpr::Str(_) | SymExpr::Var(_) => e.clone(),
        SymExpr::Mem(a) => SymExpr::mem(simplify_rec(a, b)),
        SymExpr::UnOp(op, a) => SymExpr::unop(*op, simplify_rec(a, b)),
        SymExpr::BinOp(op, l, r) => {
            SymExpr::binop(*op, simplify_rec(l, b), simplify_rec(r, b))
        }
        SymExpr::Iter(a) => SymExpr::iter(simplify_rec(a, b)),
        SymExpr::Flag(k, l, r) => {
            SymExpr::flag(*k, simplify_rec(l, b), simplify_rec(r, b))
        }
    };
    node_fixpoint(rebuilt, b)
}

fn node_fixpoint(mut cur: SymExpr, b: &mut Budget) -> SymExpr {
    while b.ok() {
        match step(&cur) {
            Some(next) => {
                if !b.charge() {
                    break;
                }
                cur = next;
            }
            None => break,
        }
    }
    cur
}

/// One rewrite at this node; children are assumed already simplified.
/// Returns `None` at a fixpoint.
fn step(e: &SymExpr) -> Option<SymExpr> {
    match e {
        SymExpr::UnOp(UnaryOp::Neg, a) => match a.as_ref() {
            SymExpr::Num(n, st) => Some(SymExpr::Num(n.wrapping_neg(), *st)),
            SymExpr::UnOp(UnaryOp::Neg, inner) => Some(inner.as_ref().clone()),
            _ => None,
        },
        SymExpr::UnOp(UnaryOp::Not, a) => match a.as_ref() {
            SymExpr::Num(n, st) => Some(SymExpr::Num(!*n, *st)),
            SymExpr::UnOp(UnaryOp::Not, inner) => Some(inner.as_ref().clone()),
            _ => None,
        },
        SymExpr::BinOp(BinaryOp::Sub, l, r) => {
            if l == r {
                return Some(SymExpr::num(0));
            }
            if let SymExpr::Num(n, st) = r.as_ref() {
                // a - n  =>  a + (-n); the sum chain folds it further.
                return Some(SymExpr::binop(
                    BinaryOp::Add,
                    l.as_ref().clone(),
                    SymExpr::Num(n.wrapping_neg(), *st),
                ));
            }
            if l.as_num() == Some(0) {
                return Some(SymExpr::unop(UnaryOp::Neg, r.as_ref().clone()));
            }
            // x|y - x&y  =>  x^y
            if let (SymExpr::BinOp(BinaryOp::Or, a1, b1), SymExpr::BinOp(BinaryOp::And, a2, b2)) =
                (l.as_ref(), r.as_ref())
            {
                if a1 == a2 && b1 == b2 {
                    return Some(canonical_chain(
                        BinaryOp::Xor,
                        vec![a1.as_ref().clone(), b1.as_ref().clone()],
                    ));
                }
            }
            None
        }
        SymExpr::BinOp(op @ (BinaryOp::Shl | BinaryOp::Shr | BinaryOp::Sar), l, r) => {
            match (l.as_num(), r.as_num()) {
                (Some(a), Some(sh)) => {
                    let count = (sh & 63) as u32;
                    let v = match op {
                        BinaryOp::Shl => (a as u64).wrapping_shl(count) as i64,
                        BinaryOp::Shr => ((a as u64) >> count) as i64,
                        _ => a >> count,
                    };
                    Some(SymExpr::num(v))
                }
                (_, Some(0)) => Some(l.as_ref().clone()),
                _ => None,
            }
        }
        SymExpr::BinOp(op, _, _) if op.is_ac() => {
            let mut operands = Vec::new();
            flatten(e, *op, &mut operands);
            let canonical = canonical_chain(*op, operands);
            (canonical != *e).then_some(canonical)
        }
        _ => None,
    }
}

fn flatten(e: &SymExpr, op: BinaryOp, out: &mut Vec<SymExpr>) {
    match e {
        SymExpr::BinOp(o, l, r) if *o == op => {
            flatten(l, op, out);
            flatten(r, op, out);
        }
        other => out.push(other.clone()),
    }
}

/// Fully canonicalize an AC chain: fold constants, apply the chain-level
/// identities, sort operands per the expression total order, rebuild
/// left-associated.
fn canonical_chain(op: BinaryOp, operands: Vec<SymExpr>) -> SymExpr {
    let identity: i64 = match op {
        BinaryOp::Add | BinaryOp::Or | BinaryOp::Xor => 0,
        BinaryOp::Mul => 1,
        BinaryOp::And => -1,
        _ => unreachable!("not an AC operator"),
    };

    let mut acc = identity;
    let mut acc_style = NumStyle::Dec;
    let mut rest: Vec<SymExpr> = Vec::with_capacity(operands.len());
    for operand in operands {
        // Re-flatten: rewrites may have inserted nested chains.
        let mut sub = Vec::new();
        flatten(&operand, op, &mut sub);
        for e in sub {
            if let SymExpr::Num(n, st) = e {
                acc = match op {
                    BinaryOp::Add => acc.wrapping_add(n),
                    BinaryOp::Mul => acc.wrapping_mul(n),
                    BinaryOp::And => acc & n,
                    BinaryOp::Or => acc | n,
                    BinaryOp::Xor => acc ^ n,
                    _ => unreachable!(),
                };
                if st == NumStyle::Hex {
                    acc_style = NumStyle::Hex;
                }
            } else {
                rest.push(e);
            }
        }
    }

    // Annihilators.
    match op {
        BinaryOp::Mul | BinaryOp::And if acc == 0 => return SymExpr::num(0),
        BinaryOp::Or if acc == -1 => return SymExpr::num(-1),
        _ => {}
    }

    rest.sort();
    match op {
        BinaryOp::And | BinaryOp::Or => rest.dedup(),
        BinaryOp::Xor => {
            // x^x cancels pairwise.
            let mut i = 0;
            while i + 1 < rest.len() {
                if rest[i] == rest[i + 1] {
                    rest.drain(i..=i + 1);
                } else {
                    i += 1;
                }
            }
        }
        BinaryOp::Add => apply_sum_mba(&mut rest),
        _ => {}
    }

    let mut parts: Vec<SymExpr> = Vec::with_capacity(rest.len() + 1);
    if acc != identity || rest.is_empty() {
        parts.push(SymExpr::Num(acc, acc_style));
    }
    parts.extend(rest);
    parts.sort();

    let mut iter = parts.into_iter();
    let first = iter.next().expect("chain has at least one operand");
    iter.fold(first, |l, r| SymExpr::binop(op, l, r))
}

/// Chain-level MBA identities on sums:
///   (x&y) + (x|y)    =>  x + y
///   (x^y) + 2*(x&y)  =>  x + y
fn apply_sum_mba(rest: &mut Vec<SymExpr>) {
    loop {
        let mut rewrote = false;
        'scan: for i in 0..rest.len() {
            let (a, b) = match &rest[i] {
                SymExpr::BinOp(BinaryOp::And, a, b) => (a.as_ref().clone(), b.as_ref().clone()),
                _ => continue,
            };
            for j in 0..rest.len() {
                if i == j {
                    continue;
                }
                if let SymExpr::BinOp(BinaryOp::Or, a2, b2) = &rest[j] {
                    if a2.as_ref() == &a && b2.as_ref() == &b {
                        let (hi, lo) = (i.max(j), i.min(j));
                        rest.remove(hi);
                        rest.remove(lo);
                        rest.push(a);
                        rest.push(b);
                        rewrote = true;
                        break 'scan;
                    }
                }
            }
        }
        if !rewrote {
            'scan2: for i in 0..rest.len() {
                let (a, b) = match &rest[i] {
                    SymExpr::BinOp(BinaryOp::Xor, a, b) => {
                        (a.as_ref().clone(), b.as_ref().clone())
                    }
                    _ => continue,
                };
                for j in 0..rest.len() {
                    if i == j {
                        continue;
                    }
                    if let SymExpr::BinOp(BinaryOp::Mul, two, and) = &rest[j] {
                        if two.as_num() == Some(2) {
                            if let SymExpr::BinOp(BinaryOp::And, a2, b2) = and.as_ref() {
                                if a2.as_ref() == &a && b2.as_ref() == &b {
                                    let (hi, lo) = (i.max(j), i.min(j));
                                    rest.remove(hi);
                                    rest.remove(lo);
                                    rest.push(a);
                                    rest.push(b);
                                    rewrote = true;
                                    break 'scan2;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !rewrote {
            return;
        }
        rest.sort();
    }
}
