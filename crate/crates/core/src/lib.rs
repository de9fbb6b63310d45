//! Static information-flow analysis for a register-machine object language
//! with an activity lifecycle: a concrete interpreter serving as the
//! semantics oracle, a translation of programs into Horn clauses, a
//! bottom-up saturation engine, an SMT-LIB backend for external CHC
//! solvers, and taint/leak queries over the saturated model.

pub mod absdom;
pub mod activity;
pub mod clauses;
pub mod engine;
pub mod gen;
pub mod harness;
pub mod hier;
pub mod interp;
pub mod parse;
pub mod sexp;
pub mod smt;
pub mod syntax;
pub mod taint;
pub mod values;
pub mod wf;
