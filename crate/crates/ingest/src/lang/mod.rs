//! The declarative ingestion language: parser, operator registry, plan
//! compiler and canonical renderer.

pub mod ast;
pub mod compile;
pub mod parser;
pub mod registry;
pub mod render;

use thiserror::Error;

use crate::item::CoreError;
use crate::op::ChainViolation;

#[derive(Debug, Error)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: expected {expected}, found {found}")]
    SyntaxError {
        line: u32,
        col: u32,
        expected: String,
        found: String,
    },
    #[error("duplicate statement or stage name {0}")]
    DuplicateName(String),
    #[error("unknown operator {0}")]
    UnknownOperator(String),
    #[error("operator {op} takes at most {max} inline arguments, got {got}")]
    BadArity { op: String, max: usize, got: usize },
    #[error("unknown statement {0}")]
    UnknownStatement(String),
    #[error("statement {0} is used by more than one stage")]
    StatementReused(String),
    #[error("unknown upstream stage {0}")]
    UnknownStage(String),
    #[error("stage graph contains a cycle")]
    CyclicStages,
    #[error("stage {stage}: predicate references l_{op} but no upstream operator is named {op}")]
    UnboundLabelPredicate { stage: String, op: String },
    #[error("stage {stage}: granularity mismatch: {details}")]
    GranularityMismatch { stage: String, details: String },
    #[error("stage {stage} receives inputs of different granularities from its upstreams")]
    StageInputMismatch { stage: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl LangError {
    pub fn from_violations(stage: &str, violations: &[ChainViolation]) -> LangError {
        LangError::GranularityMismatch {
            stage: stage.to_string(),
            details: violations
                .iter()
                .map(|v| format!("pair ({}, {}): {}", v.pair.0, v.pair.1, v.reason))
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

pub use compile::{compile_to_plan, CompileOptions};
pub use parser::parse_program;
pub use registry::{resolve_operator_ref, Registry, RegistryEntry};
pub use render::render_plan;
