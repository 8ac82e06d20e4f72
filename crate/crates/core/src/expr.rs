//! Symbolic expression trees produced by the lightweight symbolic executor.
//!
//! Expressions print through a stable display grammar (`VAR<i>`, `ITER(..)`,
//! `[..]` for memory, decimal numbers, `-0x..` for operand-originated
//! negative displacements); the tokenizer in `diffing` lexes those printed
//! forms, so the grammar here is part of the tool's external contract.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Condition flags derived from the most recent `cmp`/`test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlagKind {
    Cf,
    Zf,
    Sf,
    Of,
}

impl FlagKind {
    pub fn name(self) -> &'static str {
        match self {
            FlagKind::Cf => "CF",
            FlagKind::Zf => "ZF",
            FlagKind::Sf => "SF",
            FlagKind::Of => "OF",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Not,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Not => "~",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    /// Arithmetic right shift; prints as `>>>` so it lexes as one token.
    Sar,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::And => "&",
            BinaryOp::Or => "|",
            BinaryOp::Xor => "^",
            BinaryOp::Shl => "<<",
            BinaryOp::Shr => ">>",
            BinaryOp::Sar => ">>>",
        }
    }

    /// Associative-commutative operators get flattened and canonically
    /// ordered by the simplifier.
    pub fn is_ac(self) -> bool {
        matches!(
            self,
            BinaryOp::Add | BinaryOp::Mul | BinaryOp::And | BinaryOp::Or | BinaryOp::Xor
        )
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Mul => 5,
            BinaryOp::Add | BinaryOp::Sub => 4,
            BinaryOp::Shl | BinaryOp::Shr | BinaryOp::Sar => 3,
            BinaryOp::And => 2,
            BinaryOp::Xor => 1,
            BinaryOp::Or => 0,
        }
    }
}

/// Display style for a number: memory-operand displacements remember that
/// they came from operand syntax and print negative values as `-0x..`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NumStyle {
    Dec,
    Hex,
}

/// A symbolic value: function arguments and unknowns are `Var`, loop
/// counters are `Iter`, memory contents at unknown addresses are `Mem`.
///
/// Variant order matters: the simplifier's canonical operand order is the
/// derived `Ord` (Num < Str < Var < Mem < UnOp < BinOp < Iter < Flag).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SymExpr {
    Num(i64, NumStyle),
    Str(String),
    Var(u32),
    Mem(Box<SymExpr>),
    UnOp(UnaryOp, Box<SymExpr>),
    BinOp(BinaryOp, Box<SymExpr>, Box<SymExpr>),
    Iter(Box<SymExpr>),
    Flag(FlagKind, Box<SymExpr>, Box<SymExpr>),
}

impl SymExpr {
    pub fn num(value: i64) -> SymExpr {
        SymExpr::Num(value, NumStyle::Dec)
    }

    /// A number that originated as a memory-operand displacement.
    pub fn disp(value: i64) -> SymExpr {
        SymExpr::Num(value, NumStyle::Hex)
    }

    pub fn var(index: u32) -> SymExpr {
        SymExpr::Var(index)
    }

    pub fn mem(addr: SymExpr) -> SymExpr {
        SymExpr::Mem(Box::new(addr))
    }

    pub fn unop(op: UnaryOp, operand: SymExpr) -> SymExpr {
        SymExpr::UnOp(op, Box::new(operand))
    }

    pub fn binop(op: BinaryOp, lhs: SymExpr, rhs: SymExpr) -> SymExpr {
        SymExpr::BinOp(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn iter(initial: SymExpr) -> SymExpr {
        // Iter never directly nests another Iter.
        match initial {
            SymExpr::Iter(_) => initial,
            other => SymExpr::Iter(Box::new(other)),
        }
    }

    pub fn flag(kind: FlagKind, lhs: SymExpr, rhs: SymExpr) -> SymExpr {
        SymExpr::Flag(kind, Box::new(lhs), Box::new(rhs))
    }

    pub fn as_num(&self) -> Option<i64> {
        match self {
            SymExpr::Num(n, _) => Some(*n),
            _ => None,
        }
    }

    pub fn is_iter(&self) -> bool {
        matches!(self, SymExpr::Iter(_))
    }

    pub fn node_count(&self) -> usize {
        1 + match self {
            SymExpr::Num(..) | SymExpr::Str(_) | SymExpr::Var(_) => 0,
            SymExpr::Mem(a) | SymExpr::UnOp(_, a) | SymExpr::Iter(a) => a.node_count(),
            SymExpr::BinOp(_, l, r) | SymExpr::Flag(_, l, r) => l.node_count() + r.node_count(),
        }
    }

    /// Evaluate over wrapping 64-bit arithmetic. Opaque nodes (`Mem`, `Str`,
    /// `Iter`, `Flag`) evaluate as fixed mixing functions of their children,
    /// so any rewrite that treats them as uninterpreted atoms stays checkable.
    pub fn eval(&self, vars: &[u64]) -> u64 {
        match self {
            SymExpr::Num(n, _) => *n as u64,
            SymExpr::Str(s) => {
                let mut h = 0x6d69_7873_7472u64;
                for b in s.bytes() {
                    h = mix64(h ^ u64::from(b));
                }
                h
            }
            SymExpr::Var(i) => vars.get(*i as usize).copied().unwrap_or(0),
            SymExpr::Mem(a) => mix64(a.eval(vars) ^ 0x4d45_4d00),
            SymExpr::Iter(a) => mix64(a.eval(vars) ^ 0x4954_4552),
            SymExpr::Flag(k, l, r) => {
                mix64(l.eval(vars) ^ mix64(r.eval(vars)) ^ (*k as u64 + 1))
            }
            SymExpr::UnOp(op, a) => {
                let v = a.eval(vars);
                match op {
                    UnaryOp::Neg => v.wrapping_neg(),
                    UnaryOp::Not => !v,
                }
            }
            SymExpr::BinOp(op, l, r) => {
                let a = l.eval(vars);
                let b = r.eval(vars);
                match op {
                    BinaryOp::Add => a.wrapping_add(b),
                    BinaryOp::Sub => a.wrapping_sub(b),
                    BinaryOp::Mul => a.wrapping_mul(b),
                    BinaryOp::And => a & b,
                    BinaryOp::Or => a | b,
                    BinaryOp::Xor => a ^ b,
                    BinaryOp::Shl => a.wrapping_shl((b & 63) as u32),
                    BinaryOp::Shr => a.wrapping_shr((b & 63) as u32),
                    BinaryOp::Sar => ((a as i64).wrapping_shr((b & 63) as u32)) as u64,
                }
            }
        }
    }

    /// Stable, display-style-blind serialization used as a canonical memory
    /// key. Two addresses alias exactly when their keys match.
    pub fn canonical_key(&self) -> String {
        let mut out = String::new();
        self.write_key(&mut out);
        out
    }

    fn write_key(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            SymExpr::Num(n, _) => {
                let _ = write!(out, "n{n}");
            }
            SymExpr::Str(s) => {
                let _ = write!(out, "s{}:{s}", s.len());
            }
            SymExpr::Var(i) => {
                let _ = write!(out, "v{i}");
            }
            SymExpr::Mem(a) => {
                out.push_str("m(");
                a.write_key(out);
                out.push(')');
            }
            SymExpr::UnOp(op, a) => {
                let _ = write!(out, "u{}(", op.symbol());
                a.write_key(out);
                out.push(')');
            }
            SymExpr::BinOp(op, l, r) => {
                let _ = write!(out, "b{}(", op.symbol());
                l.write_key(out);
                out.push(',');
                r.write_key(out);
                out.push(')');
            }
            SymExpr::Iter(a) => {
                out.push_str("i(");
                a.write_key(out);
                out.push(')');
            }
            SymExpr::Flag(k, l, r) => {
                let _ = write!(out, "f{}(", k.name());
                l.write_key(out);
                out.push(',');
                r.write_key(out);
                out.push(')');
            }
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent_prec: u8) -> fmt::Result {
        match self {
            SymExpr::Num(n, style) => fmt_num(f, *n, *style),
            SymExpr::Str(s) => write!(f, "\"{s}\""),
            SymExpr::Var(i) => write!(f, "VAR{i}"),
            SymExpr::Mem(a) => {
                write!(f, "[")?;
                a.fmt_prec(f, 0)?;
                write!(f, "]")
            }
            SymExpr::Iter(a) => {
                write!(f, "ITER(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")
            }
            SymExpr::Flag(k, l, r) => {
                write!(f, "{}(", k.name())?;
                l.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                r.fmt_prec(f, 0)?;
                write!(f, ")")
            }
            SymExpr::UnOp(op, a) => {
                write!(f, "{}", op.symbol())?;
                a.fmt_prec(f, 6)
            }
            SymExpr::BinOp(op, _, _) if op.is_ac() => self.fmt_chain(f, *op, parent_prec),
            SymExpr::BinOp(op, l, r) => {
                let prec = op.precedence();
                let parens = prec < parent_prec;
                if parens {
                    write!(f, "(")?;
                }
                l.fmt_prec(f, prec)?;
                write!(f, "{}", op.symbol())?;
                r.fmt_prec(f, prec + 1)?;
                if parens {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }

    /// Print a flattened AC chain. The canonical tree sorts numbers first;
    /// for readability (and to match operand syntax like `VAR6-0x48`) they
    /// print last, with negative addends folded into a `-`.
    fn fmt_chain(&self, f: &mut fmt::Formatter<'_>, op: BinaryOp, parent_prec: u8) -> fmt::Result {
        let mut operands = Vec::new();
        collect_chain(self, op, &mut operands);
        let (nums, others): (Vec<&SymExpr>, Vec<&SymExpr>) =
            operands.iter().partition(|e| e.as_num().is_some());

        let prec = op.precedence();
        let parens = prec < parent_prec;
        if parens {
            write!(f, "(")?;
        }
        // Children of an Add chain render at the chain's own precedence so a
        // Sub term stays inline (X+3-Y), which the +/- group makes sound.
        let child_prec = if op == BinaryOp::Add { prec } else { prec + 1 };
        let mut first = true;
        for e in others.iter().chain(nums.iter()) {
            if first {
                first = false;
                e.fmt_prec(f, child_prec)?;
                continue;
            }
            match (op, e) {
                (BinaryOp::Add, SymExpr::Num(n, style)) if *n < 0 => {
                    write!(f, "-")?;
                    fmt_num_abs(f, *n, *style)?;
                }
                _ => {
                    write!(f, "{}", op.symbol())?;
                    e.fmt_prec(f, child_prec)?;
                }
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

fn collect_chain<'a>(e: &'a SymExpr, op: BinaryOp, out: &mut Vec<&'a SymExpr>) {
    match e {
        SymExpr::BinOp(o, l, r) if *o == op => {
            collect_chain(l, op, out);
            collect_chain(r, op, out);
        }
        other => out.push(other),
    }
}

fn fmt_num(f: &mut fmt::Formatter<'_>, n: i64, style: NumStyle) -> fmt::Result {
    if style == NumStyle::Hex && n < 0 {
        write!(f, "-0x{:x}", n.unsigned_abs())
    } else {
        write!(f, "{n}")
    }
}

fn fmt_num_abs(f: &mut fmt::Formatter<'_>, n: i64, style: NumStyle) -> fmt::Result {
    match style {
        NumStyle::Hex => write!(f, "0x{:x}", n.unsigned_abs()),
        NumStyle::Dec => write!(f, "{}", n.unsigned_abs()),
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// splitmix64 finalizer; shared by `eval` and the MinHash hash family.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: u32) -> SymExpr {
        SymExpr::var(i)
    }

    #[test]
    fn display_basics() {
        assert_eq!(v(0).to_string(), "VAR0");
        assert_eq!(SymExpr::num(5).to_string(), "5");
        assert_eq!(SymExpr::num(-5).to_string(), "-5");
        assert_eq!(SymExpr::disp(-0x48).to_string(), "-0x48");
        assert_eq!(SymExpr::mem(v(1)).to_string(), "[VAR1]");
        assert_eq!(SymExpr::iter(v(0)).to_string(), "ITER(VAR0)");
        assert_eq!(SymExpr::Str("Rtmin".into()).to_string(), "\"Rtmin\"");
    }

    #[test]
    fn display_sum_puts_numbers_last() {
        // Canonical order stores the number first; display restores the
        // operand-syntax shape.
        let e = SymExpr::binop(BinaryOp::Add, SymExpr::disp(-0x48), v(6));
        assert_eq!(e.to_string(), "VAR6-0x48");
        let e = SymExpr::binop(BinaryOp::Add, SymExpr::num(18), v(1));
        assert_eq!(e.to_string(), "VAR1+18");
    }

    #[test]
    fn display_precedence_parens() {
        let sum = SymExpr::binop(BinaryOp::Add, SymExpr::num(10), v(1));
        let prod = SymExpr::binop(BinaryOp::Mul, SymExpr::num(3), sum);
        assert_eq!(prod.to_string(), "(VAR1+10)*3");

        let neg_sum = SymExpr::unop(
            UnaryOp::Neg,
            SymExpr::binop(BinaryOp::Add, v(0), v(1)),
        );
        assert_eq!(neg_sum.to_string(), "-(VAR0+VAR1)");
    }

    #[test]
    fn display_sub_stays_inline_in_sums() {
        // ((X+3)-Y)+7*Z prints without parentheses, like operand syntax.
        let x3 = SymExpr::binop(BinaryOp::Add, SymExpr::num(3), v(0));
        let sub = SymExpr::binop(BinaryOp::Sub, x3, v(1));
        let prod = SymExpr::binop(BinaryOp::Mul, SymExpr::num(7), v(2));
        let e = SymExpr::binop(BinaryOp::Add, sub, prod);
        assert_eq!(e.to_string(), "VAR0+3-VAR1+VAR2*7");
    }

    #[test]
    fn iter_never_nests_directly() {
        let once = SymExpr::iter(v(0));
        let twice = SymExpr::iter(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn canonical_key_ignores_num_style() {
        let a = SymExpr::binop(BinaryOp::Add, SymExpr::num(8), v(0));
        let b = SymExpr::binop(BinaryOp::Add, SymExpr::disp(8), v(0));
        assert_eq!(a.canonical_key(), b.canonical_key());
        assert_ne!(a.canonical_key(), SymExpr::mem(v(0)).canonical_key());
    }

    #[test]
    fn eval_matches_wrapping_semantics() {
        let e = SymExpr::binop(
            BinaryOp::Mul,
            SymExpr::num(3),
            SymExpr::binop(BinaryOp::Add, v(0), v(1)),
        );
        assert_eq!(e.eval(&[2, 5]), 21);
        let shift = SymExpr::binop(BinaryOp::Shl, v(0), SymExpr::num(65));
        // x86 shift counts mask to 6 bits.
        assert_eq!(shift.eval(&[1]), 2);
    }
}
