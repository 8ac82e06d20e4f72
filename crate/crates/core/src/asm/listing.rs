//! The JSON listing front end: one document per binary.
//!
//! Schema: `{"binary": str, "functions": [{"name": str?, "entry": uint,
//! "instructions": [{"addr": uint, "mnemonic": str, "ops": [str...],
//! "string": str?}]}]}`. Operand strings use Intel syntax. Unknown fields
//! are ignored.

use serde::{Deserialize, Serialize};

use super::{
    parse_operand, render_operand, resolve_symbolic_labels, takes_code_target, Function,
    Instruction, ParseError, Program,
};

#[derive(Serialize, Deserialize)]
struct ListingDoc {
    #[serde(default)]
    binary: String,
    functions: Vec<ListingFunction>,
}

#[derive(Serialize, Deserialize)]
struct ListingFunction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    entry: u64,
    instructions: Vec<ListingInstruction>,
}

#[derive(Serialize, Deserialize)]
struct ListingInstruction {
    addr: u64,
    mnemonic: String,
    #[serde(default)]
    ops: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    string: Option<String>,
}

pub fn parse_listing(text: &str) -> Result<Program, ParseError> {
    let doc: ListingDoc = serde_json::from_str(text)?;
    let mut functions = Vec::with_capacity(doc.functions.len());
    for lf in doc.functions {
        let fname = lf
            .name
            .clone()
            .unwrap_or_else(|| format!("sub_{:x}", lf.entry));
        if lf.instructions.is_empty() {
            return Err(ParseError::EmptyFunction { function: fname });
        }
        let first = lf.instructions[0].addr;
        if first != lf.entry {
            return Err(ParseError::EntryMismatch {
                function: fname,
                entry: lf.entry,
                first,
            });
        }
        let mut instructions = Vec::with_capacity(lf.instructions.len());
        let mut prev_addr: Option<u64> = None;
        for li in lf.instructions {
            if let Some(prev) = prev_addr {
                if li.addr == prev {
                    return Err(ParseError::DuplicateAddress {
                        function: fname,
                        address: li.addr,
                    });
                }
                if li.addr < prev {
                    return Err(ParseError::Schema {
                        function: fname,
                        address: li.addr,
                        message: format!("addresses not increasing (previous {prev:#x})"),
                    });
                }
            }
            prev_addr = Some(li.addr);
            let mnemonic = li.mnemonic.trim().to_ascii_lowercase();
            if mnemonic.is_empty() {
                return Err(ParseError::Schema {
                    function: fname,
                    address: li.addr,
                    message: "empty mnemonic".into(),
                });
            }
            let code_target = takes_code_target(&mnemonic);
            let mut operands = Vec::with_capacity(li.ops.len());
            for (i, op_text) in li.ops.iter().enumerate() {
                let op = parse_operand(op_text, code_target && i == 0, false).map_err(|e| {
                    ParseError::Schema {
                        function: fname.clone(),
                        address: li.addr,
                        message: e,
                    }
                })?;
                operands.push(op);
            }
            let raw_text = if li.ops.is_empty() {
                mnemonic.clone()
            } else {
                format!("{} {}", mnemonic, li.ops.join(", "))
            };
            instructions.push(Instruction {
                address: li.addr,
                mnemonic,
                operands,
                resolved_string: li.string,
                raw_text,
                unparsed_operands: false,
            });
        }
        functions.push(Function {
            name: lf.name,
            entry: lf.entry,
            instructions,
        });
    }
    let mut program = Program {
        binary: doc.binary,
        functions,
    };
    resolve_symbolic_labels(&mut program);
    Ok(program)
}

/// Canonical listing serialization; `parse_listing` round-trips it.
pub fn serialize_program(program: &Program) -> String {
    let doc = ListingDoc {
        binary: program.binary.clone(),
        functions: program
            .functions
            .iter()
            .map(|f| ListingFunction {
                name: f.name.clone(),
                entry: f.entry,
                instructions: f
                    .instructions
                    .iter()
                    .map(|i| ListingInstruction {
                        addr: i.address,
                        mnemonic: i.mnemonic.clone(),
                        ops: i.operands.iter().map(render_operand).collect(),
                        string: i.resolved_string.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("listing serialization cannot fail")
}
