//! Compiled ingestion plans: operator instances, label-filtered stages and
//! the canonical operator (slot) order that filenames follow.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::item::{IngestItem, Schema};
use crate::lang::ast::Program;
use crate::op::ShuffleMode;

/// A literal parameter for an operator instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Str(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Str(s) => s.parse().ok(),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Canonical literal text, as the renderer and registry writer emit it.
    pub fn render(&self) -> String {
        match self {
            ParamValue::Int(v) => v.to_string(),
            ParamValue::Float(v) => format!("{v:?}"),
            ParamValue::Str(s) => format!("\"{s}\""),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:?}"),
            ParamValue::Str(s) => write!(f, "{s}"),
        }
    }
}

/// One operator instance in a plan: a builtin id plus bound parameters.
/// The instance name is unique plan-wide and is the lineage label op_name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub instance: String,
    pub builtin: String,
    pub params: BTreeMap<String, ParamValue>,
}

impl OpSpec {
    pub fn new(instance: impl Into<String>, builtin: impl Into<String>) -> Self {
        OpSpec {
            instance: instance.into(),
            builtin: builtin.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.params.get(key).and_then(ParamValue::as_int)
    }

    pub fn float(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(ParamValue::as_float)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(ParamValue::as_str)
    }
}

/// Comparison operators allowed in stage label predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }

    pub fn eval_ordering(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        matches!(
            (self, ord),
            (Cmp::Eq, Equal)
                | (Cmp::Ne, Less)
                | (Cmp::Ne, Greater)
                | (Cmp::Lt, Less)
                | (Cmp::Le, Less)
                | (Cmp::Le, Equal)
                | (Cmp::Gt, Greater)
                | (Cmp::Ge, Greater)
                | (Cmp::Ge, Equal)
        )
    }
}

/// One conjunct of a stage's label filter: `l_<op> <cmp> <value>`.
/// `now` arithmetic is resolved to a plain integer at compile time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPredicate {
    pub op_name: String,
    pub cmp: Cmp,
    pub value: String,
}

impl LabelPredicate {
    /// An item with no label for the operator fails every comparison.
    /// Comparisons are numeric when both sides parse as i64, else textual.
    pub fn matches(&self, item: &IngestItem) -> bool {
        let Some(actual) = item.label(&self.op_name) else {
            return false;
        };
        let ord = match (actual.parse::<i64>(), self.value.parse::<i64>()) {
            (Ok(a), Ok(b)) => a.cmp(&b),
            _ => actual.cmp(self.value.as_str()),
        };
        self.cmp.eval_ordering(ord)
    }

    pub fn render(&self) -> String {
        let needs_quotes = self.value.parse::<i64>().is_err();
        if needs_quotes {
            format!("l_{} {} \"{}\"", self.op_name, self.cmp.symbol(), self.value)
        } else {
            format!("l_{} {} {}", self.op_name, self.cmp.symbol(), self.value)
        }
    }
}

/// A dataflow stage: an operator chain applied to the (predicate-filtered)
/// union of its upstream stages' outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    /// Upstream stage names in declaration order; empty for source stages.
    pub upstreams: Vec<String>,
    pub predicates: Vec<LabelPredicate>,
    /// Operator instance names, in chain order.
    pub chain: Vec<String>,
    /// Names of the statements this stage uses, in order (for rendering).
    pub statements: Vec<String>,
}

impl Stage {
    pub fn is_source(&self) -> bool {
        self.upstreams.is_empty()
    }
}

/// A compiled ingestion plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestPlan {
    /// Format version tag.
    pub version: String,
    /// The program this plan was compiled from (normalized AST); rendering
    /// and persistence round-trip through it.
    pub program: Program,
    /// Stages in topological order (sources first).
    pub stages: Vec<Stage>,
    /// Raw-input bindings referenced by FROM clauses, in first-use order.
    pub sources: Vec<String>,
    /// All operator instances keyed by instance name.
    pub ops: BTreeMap<String, OpSpec>,
    /// Canonical operator order: one filename slot per entry. Sources first,
    /// then every operator instance in stage-topological chain order. This
    /// order is fixed at compile time and never changes under optimization,
    /// so optimized and unoptimized runs name files identically.
    pub slots: Vec<String>,
}

pub const PLAN_VERSION: &str = "1";

impl IngestPlan {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn op(&self, instance: &str) -> Option<&OpSpec> {
        self.ops.get(instance)
    }

    /// Slot index of an operator (or source) in the canonical order.
    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == name)
    }

    /// The stage that contains an operator instance.
    pub fn stage_of_op(&self, instance: &str) -> Option<&Stage> {
        self.stages
            .iter()
            .find(|s| s.chain.iter().any(|o| o == instance))
    }

    /// Builds the filename slot values for an item: one entry per slot,
    /// empty where the item carries no (or no common) value for that
    /// operator. Slot order equals canonical operator order.
    pub fn slot_values(&self, item: &IngestItem) -> Vec<String> {
        self.slots
            .iter()
            .map(|slot| item.label(slot).unwrap_or("").to_string())
            .collect()
    }
}

/// Schemas and granularities flowing into and out of each stage, computed at
/// compile time and reused by access-time deserialization.
#[derive(Debug, Clone)]
pub struct StageFlow {
    pub input_schema: Option<Arc<Schema>>,
    pub output_schema: Option<Arc<Schema>>,
}

/// Shuffle requirement attached to an op spec, derived by the operator
/// library from its parameters.
pub fn shuffle_mode_of(spec: &OpSpec) -> ShuffleMode {
    match spec.str("scope") {
        Some("global") => match spec.str("by") {
            Some(op) => ShuffleMode::ByLabel(op.to_string()),
            None => ShuffleMode::Gather,
        },
        _ => ShuffleMode::None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_numeric_and_absent() {
        let item = IngestItem::file(vec![]).with_label("replicate1", "2").unwrap();
        let eq = LabelPredicate {
            op_name: "replicate1".into(),
            cmp: Cmp::Eq,
            value: "2".into(),
        };
        assert!(eq.matches(&item));
        let gt = LabelPredicate {
            op_name: "replicate1".into(),
            cmp: Cmp::Gt,
            value: "10".into(),
        };
        assert!(!gt.matches(&item));
        // Numeric, not lexicographic: "2" < "10".
        let lt = LabelPredicate {
            op_name: "replicate1".into(),
            cmp: Cmp::Lt,
            value: "10".into(),
        };
        assert!(lt.matches(&item));
        // Absent label fails all comparisons, including !=.
        let ne = LabelPredicate {
            op_name: "nosuch".into(),
            cmp: Cmp::Ne,
            value: "1".into(),
        };
        assert!(!ne.matches(&item));
    }

    #[test]
    fn param_value_render() {
        assert_eq!(ParamValue::Int(42).render(), "42");
        assert_eq!(ParamValue::Float(0.1).render(), "0.1");
        assert_eq!(ParamValue::Str("pax".into()).render(), "\"pax\"");
    }
}
