//! Normalized program model for disassembled x86-64 code plus the two text
//! front ends (JSON listing and objdump output) and per-function CFGs.

mod cfg;
mod listing;
mod objdump;
mod operand;

pub use cfg::{build_cfg, filter_functions, Block, Cfg};
pub use listing::{parse_listing, serialize_program};
pub use objdump::parse_objdump;
pub use operand::{parse_operand, render_operand, Operand, Reg, Segment};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("invalid listing JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("function {function} at {address:#x}: {message}")]
    Schema {
        function: String,
        address: u64,
        message: String,
    },
    #[error("function {function}: duplicate instruction address {address:#x}")]
    DuplicateAddress { function: String, address: u64 },
    #[error("function {function}: entry {entry:#x} does not match first instruction address {first:#x}")]
    EntryMismatch { function: String, entry: u64, first: u64 },
    #[error("function {function}: no instructions")]
    EmptyFunction { function: String },
}

/// One disassembled instruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instruction {
    pub address: u64,
    pub mnemonic: String,
    pub operands: Vec<Operand>,
    /// Resolved string content for data references, when the producer of the
    /// listing knew it (stands in for disassembler-side string resolution).
    pub resolved_string: Option<String>,
    /// Original source line, for diagnostics only.
    pub raw_text: String,
    /// Set when the operand text could not be parsed; the instruction is
    /// kept with empty operands.
    pub unparsed_operands: bool,
}

// raw_text is diagnostic-only and excluded from equality so that
// parse(serialize(p)) == p holds regardless of source formatting.
impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.address == other.address
            && self.mnemonic == other.mnemonic
            && self.operands == other.operands
            && self.resolved_string == other.resolved_string
            && self.unparsed_operands == other.unparsed_operands
    }
}

impl Eq for Instruction {}

impl Instruction {
    /// Target address for direct branches/calls (`jmp 0x10`, `call foo`).
    pub fn label_target(&self) -> Option<u64> {
        match self.operands.first() {
            Some(Operand::Label { addr, .. }) => Some(*addr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    /// Symbol name; ground-truth label for evaluation only, never an input
    /// to similarity scoring.
    pub name: Option<String>,
    pub entry: u64,
    pub instructions: Vec<Instruction>,
}

impl Function {
    pub fn index_of(&self, address: u64) -> Option<usize> {
        self.instructions
            .binary_search_by_key(&address, |i| i.address)
            .ok()
    }

    pub fn contains(&self, address: u64) -> bool {
        self.index_of(address).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub binary: String,
    pub functions: Vec<Function>,
}

/// Conditional control transfer: `j*` except `jmp`, plus the `loop`/`jcxz`
/// family (count-based, but still target + fall-through).
pub fn is_cond_branch(mnemonic: &str) -> bool {
    (mnemonic.starts_with('j') && mnemonic != "jmp")
        || matches!(mnemonic, "loop" | "loope" | "loopne" | "loopz" | "loopnz")
}

pub fn is_uncond_jump(mnemonic: &str) -> bool {
    mnemonic == "jmp"
}

pub fn is_ret(mnemonic: &str) -> bool {
    matches!(mnemonic, "ret" | "retn" | "retf" | "iret" | "iretq")
}

pub fn is_call(mnemonic: &str) -> bool {
    mnemonic == "call"
}

/// Block terminator: anything after one of these starts a new basic block.
pub fn is_terminator(mnemonic: &str) -> bool {
    is_cond_branch(mnemonic) || is_uncond_jump(mnemonic) || is_ret(mnemonic)
}

/// Mnemonics that take a branch target or callee operand; bare numbers and
/// symbols in their operand position parse as labels rather than immediates.
pub fn takes_code_target(mnemonic: &str) -> bool {
    is_cond_branch(mnemonic) || is_uncond_jump(mnemonic) || is_call(mnemonic)
}

/// Resolve name-only labels (`call subFunc`) against the program's own
/// function symbols.
pub(crate) fn resolve_symbolic_labels(program: &mut Program) {
    use std::collections::HashMap;
    let by_name: HashMap<String, u64> = program
        .functions
        .iter()
        .filter_map(|f| f.name.clone().map(|n| (n, f.entry)))
        .collect();
    for func in &mut program.functions {
        for instr in &mut func.instructions {
            for op in &mut instr.operands {
                if let Operand::Label { addr, name: Some(name) } = op {
                    if *addr == 0 {
                        if let Some(entry) = by_name.get(name) {
                            *addr = *entry;
                        }
                    }
                }
            }
        }
    }
}
