//! Abstract syntax for ingestion programs.

use serde::{Deserialize, Serialize};

use crate::plan::{Cmp, ParamValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub assignments: Vec<Assignment>,
    pub stage_stmts: Vec<StageStmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub name: String,
    pub stmt: Statement,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Select(SelectStmt),
    Format(FormatStmt),
    Store(StoreStmt),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectStmt {
    pub projection: Projection,
    pub from: String,
    pub using: Option<OpRef>,
    pub filter: Option<OpRef>,
    pub replicate: Option<ReplicateBy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    Star,
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReplicateBy {
    K(i64),
    Op(OpRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormatClause {
    PartitionBy,
    ChunkBy,
    OrderBy,
    SerializeAs,
}

impl FormatClause {
    pub fn keywords(self) -> (&'static str, &'static str) {
        match self {
            FormatClause::PartitionBy => ("PARTITION", "BY"),
            FormatClause::ChunkBy => ("CHUNK", "BY"),
            FormatClause::OrderBy => ("ORDER", "BY"),
            FormatClause::SerializeAs => ("SERIALIZE", "AS"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatStmt {
    pub inputs: Vec<String>,
    /// Clauses in written order; the order is the chain order.
    pub clauses: Vec<(FormatClause, OpRef)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStmt {
    pub inputs: Vec<String>,
    pub locate: Option<OpRef>,
    pub upload: Option<OpRef>,
}

/// A reference to an operator by registry (or builtin) name, with optional
/// inline literal arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRef {
    pub name: String,
    pub args: Vec<ParamValue>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StageKind {
    Create,
    Chain { upstreams: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStmt {
    pub kind: StageKind,
    pub name: String,
    pub using: Vec<String>,
    pub predicates: Vec<PredAst>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredRhs {
    Int(i64),
    Str(String),
    /// `now` plus an optional signed offset, resolved at compile time.
    Now { offset: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredAst {
    pub op_name: String,
    pub cmp: Cmp,
    pub rhs: PredRhs,
    pub pos: Pos,
}
