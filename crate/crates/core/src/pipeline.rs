//! Per-function analysis pipeline: CFG, traversal, key expressions, graph,
//! serialization, tokens, signature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{build_cfg, Cfg, Function, Program};
use crate::config::Config;
use crate::diffing::{signature, tokenize_serialized, FunctionSignature, MinHashSignature, SignatureFile};
use crate::graph::{break_loops, build_key_semantics_graph, topo_serialize, KeyNode, KeySemGraph};
use crate::keysem::{classify, translate, KeyExpr};
use crate::symexec::{traverse, TraversalRecord};

#[derive(Debug, Clone)]
pub struct FunctionAnalysis {
    pub name: Option<String>,
    pub entry: u64,
    pub cfg: Cfg,
    pub record: TraversalRecord,
    pub keys: Vec<(u64, KeyExpr)>,
    /// Loop-free key-semantics graph (back edges removed, headers marked).
    pub graph: KeySemGraph,
    pub serialized: Vec<KeyNode>,
    pub tokens: Vec<String>,
    pub signature: MinHashSignature,
    pub diagnostics: Vec<String>,
}

impl FunctionAnalysis {
    pub fn instruction_count(&self) -> usize {
        self.record.entries.len()
    }

    pub fn unsupported_count(&self) -> usize {
        self.record
            .entries
            .values()
            .filter(|e| e.unsupported())
            .count()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalysisStats {
    pub total_functions: usize,
    pub analyzed_functions: usize,
    pub filtered_out: usize,
    pub empty_token_functions: usize,
    pub executed_instructions: usize,
    pub unsupported_instructions: usize,
}

impl AnalysisStats {
    pub fn unsupported_rate(&self) -> f64 {
        if self.executed_instructions == 0 {
            0.0
        } else {
            self.unsupported_instructions as f64 / self.executed_instructions as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProgramAnalysis {
    pub binary: String,
    pub functions: Vec<FunctionAnalysis>,
    pub stats: AnalysisStats,
}

pub fn analyze_function(f: &Function, config: &Config) -> FunctionAnalysis {
    let cfg = build_cfg(f);
    let record = traverse(f, &cfg, config.rule_budget);
    let mut diagnostics = record.diagnostics.clone();

    let mut keys: Vec<(u64, KeyExpr)> = Vec::new();
    for instr in &f.instructions {
        let Some(kind) = classify(instr) else { continue };
        match translate(instr, kind, record.entries.get(&instr.address)) {
            Ok(expr) => keys.push((instr.address, expr)),
            Err(e) => {
                if record.entries.contains_key(&instr.address) {
                    diagnostics.push(e.to_string());
                }
                // unreachable key instructions are already covered by the
                // traversal's coverage diagnostic
            }
        }
    }

    let graph = break_loops(&build_key_semantics_graph(f, &cfg, &keys));
    let serialized = match topo_serialize(&graph) {
        Ok(s) => s,
        Err(e) => {
            diagnostics.push(e.to_string());
            Vec::new()
        }
    };
    let tokens = tokenize_serialized(&serialized);
    let signature = signature(&tokens, &config.minhash_params());

    FunctionAnalysis {
        name: f.name.clone(),
        entry: f.entry,
        cfg,
        record,
        keys,
        graph,
        serialized,
        tokens,
        signature,
        diagnostics,
    }
}

/// Analyze every function with at least `min_blocks` basic blocks.
/// Functions are independent; analysis runs in parallel with deterministic
/// output order.
pub fn analyze_program(program: &Program, config: &Config) -> ProgramAnalysis {
    let eligible: Vec<&Function> = program
        .functions
        .iter()
        .filter(|f| build_cfg(f).blocks.len() >= config.min_blocks)
        .collect();
    let functions: Vec<FunctionAnalysis> = eligible
        .par_iter()
        .map(|f| analyze_function(f, config))
        .collect();

    let stats = AnalysisStats {
        total_functions: program.functions.len(),
        analyzed_functions: functions.len(),
        filtered_out: program.functions.len() - functions.len(),
        empty_token_functions: functions.iter().filter(|a| a.tokens.is_empty()).count(),
        executed_instructions: functions.iter().map(|a| a.instruction_count()).sum(),
        unsupported_instructions: functions.iter().map(|a| a.unsupported_count()).sum(),
    };

    ProgramAnalysis {
        binary: program.binary.clone(),
        functions,
        stats,
    }
}

impl ProgramAnalysis {
    /// The cacheable signature index for this analysis.
    pub fn signature_file(&self, config: &Config) -> SignatureFile {
        SignatureFile {
            params: config.minhash_params(),
            binary: self.binary.clone(),
            functions: self
                .functions
                .iter()
                .map(|a| FunctionSignature {
                    name: a.name.clone(),
                    entry: a.entry,
                    slots: a.signature.slots.clone(),
                    empty: a.signature.empty,
                })
                .collect(),
        }
    }
}
