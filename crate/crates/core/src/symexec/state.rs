//! Symbolic machine state: register file, syntactically-keyed memory, and
//! the compare record that feeds flag-consuming instructions.

use std::collections::HashMap;

use crate::asm::{Reg, Segment};
use crate::expr::SymExpr;
use crate::simplify::simplify_with_budget;

/// Integer argument registers in x86-64 SysV order.
pub const ABI_ARG_REGISTERS: [Reg; 6] = [Reg::Rdi, Reg::Rsi, Reg::Rdx, Reg::Rcx, Reg::R8, Reg::R9];

/// Expressions beyond this many nodes are replaced by a fresh unknown.
/// Self-referential accumulators (hash/CRC loops index a table with the
/// value they also shift) otherwise double the tree per instruction.
const EXPR_NODE_CAP: usize = 1024;

/// A writable location: a 64-bit register family or a canonically-keyed
/// memory cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Loc {
    Reg(Reg),
    Mem(String),
}

#[derive(Debug, Clone)]
pub struct MachineState {
    regs: HashMap<Reg, SymExpr>,
    mem: HashMap<String, SymExpr>,
    next_var: u32,
    last_compare: Option<(SymExpr, SymExpr)>,
    /// Bit i set when `ABI_ARG_REGISTERS[i]` was written since function entry
    /// or since the previous call.
    args_written: u8,
    simplify_budget: u32,
    pub budget_exhaustions: u32,
    pub oversize_replacements: u32,
}

impl MachineState {
    pub fn new(simplify_budget: u32) -> MachineState {
        MachineState {
            regs: HashMap::new(),
            mem: HashMap::new(),
            next_var: 0,
            last_compare: None,
            args_written: 0,
            simplify_budget,
            budget_exhaustions: 0,
            oversize_replacements: 0,
        }
    }

    /// Seed the calling convention: rdi..r9 become VAR0..VAR5. Every other
    /// register is assigned lazily on first read. Seeding does not count as
    /// "written" for call-argument extraction.
    pub fn seed_arguments(&mut self) {
        for (i, reg) in ABI_ARG_REGISTERS.iter().enumerate() {
            self.regs.insert(*reg, SymExpr::var(i as u32));
        }
        self.next_var = ABI_ARG_REGISTERS.len() as u32;
    }

    pub fn fresh_var(&mut self) -> SymExpr {
        let v = SymExpr::var(self.next_var);
        self.next_var += 1;
        v
    }

    pub fn next_var_index(&self) -> u32 {
        self.next_var
    }

    pub fn read_reg(&mut self, reg: Reg) -> SymExpr {
        if let Some(e) = self.regs.get(&reg) {
            return e.clone();
        }
        let v = self.fresh_var();
        self.regs.insert(reg, v.clone());
        v
    }

    /// Partial-width writes overwrite the whole 64-bit family.
    pub fn write_reg(&mut self, reg: Reg, value: SymExpr) {
        if let Some(bit) = ABI_ARG_REGISTERS.iter().position(|r| *r == reg) {
            self.args_written |= 1 << bit;
        }
        self.regs.insert(reg, value);
    }

    pub fn peek_reg(&self, reg: Reg) -> Option<&SymExpr> {
        self.regs.get(&reg)
    }

    pub fn mem_key(addr: &SymExpr, segment: Option<Segment>) -> String {
        match segment {
            Some(seg) => format!("{}:{}", seg.name(), addr.canonical_key()),
            None => addr.canonical_key(),
        }
    }

    /// Read memory at a simplified address. Exact canonical-key matches
    /// return the stored value; anything else reads as `[addr]` without
    /// allocating a fresh variable.
    pub fn read_mem(&self, addr: &SymExpr, segment: Option<Segment>) -> SymExpr {
        let key = Self::mem_key(addr, segment);
        match self.mem.get(&key) {
            Some(v) => v.clone(),
            None => SymExpr::mem(addr.clone()),
        }
    }

    pub fn write_mem(&mut self, key: String, value: SymExpr) {
        self.mem.insert(key, value);
    }

    pub fn set_loc(&mut self, loc: &Loc, value: SymExpr) {
        match loc {
            Loc::Reg(r) => {
                self.regs.insert(*r, value);
            }
            Loc::Mem(key) => {
                self.mem.insert(key.clone(), value);
            }
        }
    }

    pub fn set_last_compare(&mut self, lhs: SymExpr, rhs: SymExpr) {
        self.last_compare = Some((lhs, rhs));
    }

    pub fn last_compare(&self) -> Option<&(SymExpr, SymExpr)> {
        self.last_compare.as_ref()
    }

    /// Argument expressions for a call: ABI registers written since entry or
    /// since the previous call, truncated at the first unwritten register.
    pub fn call_arguments(&mut self) -> Vec<SymExpr> {
        let mut args = Vec::new();
        for (i, reg) in ABI_ARG_REGISTERS.iter().enumerate() {
            if self.args_written & (1 << i) == 0 {
                break;
            }
            args.push(self.read_reg(*reg));
        }
        args
    }

    pub fn clear_args_written(&mut self) {
        self.args_written = 0;
    }

    /// Budgeted simplification; exhaustions are counted for diagnostics.
    /// Results past the node cap degrade to a fresh unknown, like any other
    /// unresolvable value.
    pub fn simplify(&mut self, e: &SymExpr) -> SymExpr {
        let (out, exhausted) = simplify_with_budget(e, self.simplify_budget);
        if exhausted {
            self.budget_exhaustions += 1;
        }
        if out.node_count() > EXPR_NODE_CAP {
            self.oversize_replacements += 1;
            return self.fresh_var();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeding_maps_rdi_to_var0() {
        let mut s = MachineState::new(1000);
        s.seed_arguments();
        assert_eq!(s.read_reg(Reg::Rdi), SymExpr::var(0));
        assert_eq!(s.read_reg(Reg::Rcx), SymExpr::var(3));
        assert_eq!(s.read_reg(Reg::R9), SymExpr::var(5));
        assert_eq!(s.next_var_index(), 6);
    }

    #[test]
    fn lazy_reads_are_memoized() {
        let mut s = MachineState::new(1000);
        s.seed_arguments();
        let first = s.read_reg(Reg::Rbx);
        let second = s.read_reg(Reg::Rbx);
        assert_eq!(first, SymExpr::var(6));
        assert_eq!(first, second);
        assert_eq!(s.next_var_index(), 7);
    }

    #[test]
    fn unknown_memory_reads_do_not_allocate() {
        let mut s = MachineState::new(1000);
        s.seed_arguments();
        let addr = SymExpr::var(0);
        let before = s.next_var_index();
        assert_eq!(s.read_mem(&addr, None), SymExpr::mem(addr.clone()));
        assert_eq!(s.next_var_index(), before);
    }

    #[test]
    fn call_arguments_truncate_at_first_gap() {
        let mut s = MachineState::new(1000);
        s.seed_arguments();
        s.write_reg(Reg::Rdi, SymExpr::num(1));
        s.write_reg(Reg::Rdx, SymExpr::num(3)); // rsi unwritten: stops the list
        assert_eq!(s.call_arguments(), vec![SymExpr::num(1)]);
        s.write_reg(Reg::Rsi, SymExpr::num(9));
        assert_eq!(
            s.call_arguments(),
            vec![SymExpr::num(1), SymExpr::num(9), SymExpr::num(3)]
        );
        s.clear_args_written();
        assert!(s.call_arguments().is_empty());
    }
}
