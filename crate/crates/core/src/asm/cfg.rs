//! Basic-block control-flow graphs over the normalized program model.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{is_cond_branch, is_ret, is_terminator, is_uncond_jump, Function, Program};

/// Contiguous instruction index range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    /// Ordered, deduplicated (from, to) block id pairs.
    pub edges: Vec<(usize, usize)>,
    pub entry: usize,
    /// Branches whose target is not an instruction boundary inside the
    /// function; treated as exits (tail calls are common).
    pub external_targets: Vec<(u64, u64)>,
}

impl Cfg {
    pub fn block_of(&self, instr_index: usize) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.start <= instr_index && instr_index < b.end)
    }

    pub fn successors(&self, block: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |(from, _)| *from == block)
            .map(|(_, to)| *to)
    }
}

/// Build the CFG. Leaders are the function entry, internal branch targets,
/// and the instruction following any terminator (conditional or unconditional
/// jump, or return). Calls fall through and do not end a block.
pub fn build_cfg(f: &Function) -> Cfg {
    let n = f.instructions.len();
    let index_of: HashMap<u64, usize> = f
        .instructions
        .iter()
        .enumerate()
        .map(|(i, ins)| (ins.address, i))
        .collect();

    let mut leaders = BTreeSet::new();
    let mut external = Vec::new();
    leaders.insert(0usize);
    for (i, ins) in f.instructions.iter().enumerate() {
        let m = ins.mnemonic.as_str();
        if is_cond_branch(m) || is_uncond_jump(m) {
            match ins.label_target().and_then(|t| index_of.get(&t).copied()) {
                Some(target) => {
                    leaders.insert(target);
                }
                None => {
                    if let Some(t) = ins.label_target() {
                        external.push((ins.address, t));
                    }
                }
            }
        }
        if is_terminator(m) && i + 1 < n {
            leaders.insert(i + 1);
        }
    }

    let starts: Vec<usize> = leaders.into_iter().collect();
    let blocks: Vec<Block> = starts
        .iter()
        .enumerate()
        .map(|(bi, &start)| Block {
            start,
            end: starts.get(bi + 1).copied().unwrap_or(n),
        })
        .collect();
    let block_of = |instr: usize| -> usize {
        match starts.binary_search(&instr) {
            Ok(b) => b,
            Err(next) => next - 1,
        }
    };

    let mut edges = BTreeSet::new();
    for (bi, block) in blocks.iter().enumerate() {
        if block.is_empty() {
            continue;
        }
        let last = block.end - 1;
        let ins = &f.instructions[last];
        let m = ins.mnemonic.as_str();
        let internal_target = ins.label_target().and_then(|t| index_of.get(&t).copied());
        if is_cond_branch(m) {
            if let Some(t) = internal_target {
                edges.insert((bi, block_of(t)));
            }
            if block.end < n {
                edges.insert((bi, block_of(block.end)));
            }
        } else if is_uncond_jump(m) {
            if let Some(t) = internal_target {
                edges.insert((bi, block_of(t)));
            }
        } else if !is_ret(m) && block.end < n {
            edges.insert((bi, block_of(block.end)));
        }
    }

    Cfg {
        blocks,
        edges: edges.into_iter().collect(),
        entry: 0,
        external_targets: external,
    }
}

/// Retain functions with at least `min_blocks` basic blocks.
pub fn filter_functions(program: &Program, min_blocks: usize) -> Program {
    Program {
        binary: program.binary.clone(),
        functions: program
            .functions
            .iter()
            .filter(|f| build_cfg(f).blocks.len() >= min_blocks)
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_listing;

    fn func(json: &str) -> Function {
        parse_listing(json).unwrap().functions.remove(0)
    }

    fn listing(instrs: &[(u64, &str, &[&str])]) -> Function {
        let body: Vec<String> = instrs
            .iter()
            .map(|(a, m, ops)| {
                let ops: Vec<String> = ops.iter().map(|o| format!("\"{o}\"")).collect();
                format!(
                    r#"{{"addr":{a},"mnemonic":"{m}","ops":[{}]}}"#,
                    ops.join(",")
                )
            })
            .collect();
        func(&format!(
            r#"{{"binary":"t","functions":[{{"name":"f","entry":{},"instructions":[{}]}}]}}"#,
            instrs[0].0,
            body.join(",")
        ))
    }

    #[test]
    fn straight_line_is_one_block() {
        let f = listing(&[
            (0, "mov", &["eax", "1"]),
            (1, "add", &["eax", "2"]),
            (2, "xor", &["ecx", "ecx"]),
            (3, "ret", &[]),
        ]);
        let cfg = build_cfg(&f);
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn conditional_branch_shape() {
        // cmp; jle L; mov; L: mov; ret  =>  3 blocks, edges {(0,1),(0,2),(1,2)}
        let f = listing(&[
            (0, "cmp", &["eax", "5"]),
            (1, "jle", &["0x3"]),
            (2, "mov", &["ecx", "1"]),
            (3, "mov", &["ecx", "0"]),
            (4, "ret", &[]),
        ]);
        let cfg = build_cfg(&f);
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.edges, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn self_loop_back_edge() {
        // L: dec eax; jnz L; ret  =>  2 blocks with back edge (0,0)
        let f = listing(&[
            (0, "dec", &["eax"]),
            (1, "jnz", &["0x0"]),
            (2, "ret", &[]),
        ]);
        let cfg = build_cfg(&f);
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.edges, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn external_target_is_exit_not_error() {
        let f = listing(&[(0, "cmp", &["eax", "5"]), (1, "jmp", &["0x999"]), (2, "ret", &[])]);
        let cfg = build_cfg(&f);
        assert_eq!(cfg.external_targets, vec![(1, 0x999)]);
        // jmp block has no out-edge
        assert!(cfg.edges.iter().all(|(from, _)| *from != 0));
    }

    #[test]
    fn blocks_partition_instructions() {
        let f = listing(&[
            (0, "cmp", &["eax", "5"]),
            (1, "jle", &["0x4"]),
            (2, "call", &["0x100"]),
            (3, "jmp", &["0x5"]),
            (4, "inc", &["eax"]),
            (5, "ret", &[]),
        ]);
        let cfg = build_cfg(&f);
        let mut covered = vec![0u8; f.instructions.len()];
        for b in &cfg.blocks {
            for c in &mut covered[b.start..b.end] {
                *c += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        for (a, b) in &cfg.edges {
            assert!(*a < cfg.blocks.len() && *b < cfg.blocks.len());
        }
    }

    #[test]
    fn block_count_invariant_under_symbol_renaming() {
        let make = |name: &str, callee: &str| {
            func(&format!(
                r#"{{"binary":"t","functions":[{{"name":"{name}","entry":0,"instructions":[
                    {{"addr":0,"mnemonic":"cmp","ops":["eax","1"]}},
                    {{"addr":1,"mnemonic":"jle","ops":["0x4"]}},
                    {{"addr":2,"mnemonic":"call","ops":["{callee}"]}},
                    {{"addr":3,"mnemonic":"jmp","ops":["0x5"]}},
                    {{"addr":4,"mnemonic":"inc","ops":["eax"]}},
                    {{"addr":5,"mnemonic":"ret","ops":[]}}
                ]}}]}}"#
            ))
        };
        let a = build_cfg(&make("original", "helper"));
        let b = build_cfg(&make("renamed_fn", "other_helper"));
        assert_eq!(a.blocks.len(), b.blocks.len());
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn filter_respects_min_blocks() {
        let text = r#"{"binary":"t","functions":[
            {"name":"big","entry":0,"instructions":[
                {"addr":0,"mnemonic":"cmp","ops":["eax","1"]},
                {"addr":1,"mnemonic":"jle","ops":["0x3"]},
                {"addr":2,"mnemonic":"jmp","ops":["0x4"]},
                {"addr":3,"mnemonic":"cmp","ops":["eax","2"]},
                {"addr":4,"mnemonic":"jg","ops":["0x6"]},
                {"addr":5,"mnemonic":"inc","ops":["eax"]},
                {"addr":6,"mnemonic":"ret","ops":[]}
            ]},
            {"name":"small","entry":16,"instructions":[
                {"addr":16,"mnemonic":"ret","ops":[]}
            ]}
        ]}"#;
        let p = parse_listing(text).unwrap();
        let big_blocks = build_cfg(&p.functions[0]).blocks.len();
        assert!(big_blocks >= 5, "fixture expected >=5 blocks, got {big_blocks}");
        let kept = filter_functions(&p, 5);
        assert_eq!(kept.functions.len(), 1);
        assert_eq!(kept.functions[0].name.as_deref(), Some("big"));
        assert_eq!(filter_functions(&p, big_blocks + 1).functions.len(), 0);
        // min_blocks = 1 keeps everything
        assert_eq!(filter_functions(&p, 1).functions.len(), 2);
    }
}
