//! Lightweight symbolic execution: per-operand symbolic expressions via a
//! depth-first complete instruction traversal, with two-pass loop processing
//! that marks loop counters as `ITER(initial)`.

mod state;
mod step;
mod traverse;

pub use state::{Loc, MachineState, ABI_ARG_REGISTERS};
pub use step::{symbolic_step, OperandRecord, StepOutcome};
pub use traverse::{dump_record, traverse, InstrRecord, LoopInfo, TraversalRecord};
