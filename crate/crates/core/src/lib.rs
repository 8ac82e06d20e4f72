//! Function-level binary code similarity through key-semantics graphs.
//!
//! The pipeline: parse disassembly ([`asm`]) -> build CFGs -> lightweight
//! symbolic execution with loop-counter marking ([`symexec`]) -> classify
//! and translate key instructions ([`keysem`]) -> key-semantics graph with
//! loop breaking and topological serialization ([`graph`]) -> tokenization
//! and MinHash signatures ([`diffing`]) -> 1-to-n ranking ([`rank`]).

pub mod asm;
pub mod config;
pub mod diffing;
pub mod expr;
pub mod graph;
pub mod keysem;
pub mod pipeline;
pub mod rank;
pub mod simplify;
pub mod symexec;

pub use config::Config;
pub use expr::SymExpr;
pub use keysem::{KeyExpr, KeyKind};
pub use pipeline::{analyze_function, analyze_program, FunctionAnalysis, ProgramAnalysis};
pub use rank::{rank_all, MatchReport};
