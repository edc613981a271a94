//! The ingestion operator contract (iterator model) and chain validation.

use std::sync::Arc;

use crate::item::{CoreError, Granularity, IngestItem, Schema, ViolationRecord};

/// Granularities an operator accepts on input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GranIn {
    Fixed(Granularity),
    OneOf(Vec<Granularity>),
    /// Accepts any granularity and preserves it (replicators, locators).
    Any,
}

impl GranIn {
    pub fn accepts(&self, g: Granularity) -> bool {
        match self {
            GranIn::Fixed(f) => *f == g,
            GranIn::OneOf(set) => set.contains(&g),
            GranIn::Any => true,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            GranIn::Fixed(g) => g.to_string(),
            GranIn::OneOf(set) => set
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>()
                .join("|"),
            GranIn::Any => "any".to_string(),
        }
    }
}

/// Output granularity, possibly input-dependent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GranOut {
    Fixed(Granularity),
    SameAsInput,
}

impl GranOut {
    pub fn resolve(self, input: Granularity) -> Granularity {
        match self {
            GranOut::Fixed(g) => g,
            GranOut::SameAsInput => input,
        }
    }
}

/// How an operator transforms the flowing record schema; used by chain
/// validation and by access-time schema reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaEffect {
    /// Schema flows through unchanged.
    Preserve,
    /// Establishes a schema (parsers).
    Sets(Arc<Schema>),
    /// Restricts to the named attributes, in the given order.
    Projects(Vec<String>),
}

/// Static description of one operator instance: the five lifecycle entry
/// points live on [`Operator`]; everything the planner needs lives here.
#[derive(Debug, Clone)]
pub struct OpSignature {
    /// Unique instance name; doubles as the lineage label op_name.
    pub name: String,
    pub input: GranIn,
    pub output: GranOut,
    /// May the runtime fan this operator out over a thread pool?
    pub parallel_mode: bool,
    /// Requires all inputs materialized before it runs (sorters, samplers
    /// that need group sizes, chunkers).
    pub blocking: bool,
    /// Attributes the operator reads; validated against the flowing schema.
    pub requires_attrs: Vec<String>,
    pub schema_effect: SchemaEffect,
    /// Label values vary per output item at the operator's own granularity
    /// (line indexes); such labels never survive onto coarser materializations.
    pub per_item_label: bool,
    /// Cross-node grouping this operator needs before it can run.
    pub shuffle: ShuffleMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShuffleMode {
    None,
    /// Group items across nodes by the label assigned by the named operator.
    ByLabel(String),
    /// Gather all items into a single group.
    Gather,
}

impl OpSignature {
    pub fn new(name: impl Into<String>, input: GranIn, output: GranOut) -> Self {
        OpSignature {
            name: name.into(),
            input,
            output,
            parallel_mode: false,
            blocking: false,
            requires_attrs: Vec::new(),
            schema_effect: SchemaEffect::Preserve,
            per_item_label: false,
            shuffle: ShuffleMode::None,
        }
    }
}

/// The ingestion operator iterator contract.
///
/// After `set_input`, repeated `has_next`/`next` pairs enumerate the outputs
/// exactly once; `finalize` runs once per `set_input` epoch and may emit
/// trailing outputs (the final drain).
pub trait Operator {
    fn signature(&self) -> &OpSignature;

    fn initialize(&mut self) -> Result<(), CoreError> {
        Ok(())
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError>;

    fn has_next(&mut self) -> Result<bool, CoreError>;

    fn next(&mut self) -> Result<IngestItem, CoreError>;

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError>;

    /// Violations diverted to the reject side-channel during this epoch.
    fn take_rejects(&mut self) -> Vec<ViolationRecord> {
        Vec::new()
    }
}

/// Runs one operator over a materialized input set through the full
/// lifecycle and collects its outputs plus the finalize-time drain.
pub fn drain_operator(
    op: &mut dyn Operator,
    inputs: Vec<IngestItem>,
) -> Result<Vec<IngestItem>, CoreError> {
    let sig = op.signature().clone();
    for item in &inputs {
        if !sig.input.accepts(item.granularity()) {
            return Err(CoreError::GranularityMismatch {
                op: sig.name.clone(),
                expected: sig.input.describe(),
                actual: item.granularity().to_string(),
            });
        }
    }
    op.initialize()?;
    op.set_input(inputs)?;
    let mut out = Vec::new();
    while op.has_next()? {
        out.push(op.next()?);
    }
    out.extend(op.finalize()?);
    Ok(out)
}

/// One validation failure from [`validate_chain`], naming the offending
/// consecutive pair (1-indexed).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainViolation {
    pub pair: (usize, usize),
    pub reason: String,
}

/// Validates that consecutive operators agree on granularity and that every
/// attribute an operator reads exists in the schema flowing into it.
/// `entry` is the granularity/schema entering the chain.
pub fn validate_chain(
    ops: &[OpSignature],
    entry: Granularity,
    entry_schema: Option<Arc<Schema>>,
) -> Vec<ChainViolation> {
    let mut violations = Vec::new();
    let mut gran = entry;
    let mut schema = entry_schema;
    for (idx, sig) in ops.iter().enumerate() {
        if !sig.input.accepts(gran) {
            violations.push(ChainViolation {
                pair: (idx, idx + 1),
                reason: format!(
                    "operator {} expects {} input but receives {}",
                    sig.name,
                    sig.input.describe(),
                    gran
                ),
            });
        }
        if let Some(s) = &schema {
            for attr in &sig.requires_attrs {
                if s.index_of(attr).is_none() {
                    violations.push(ChainViolation {
                        pair: (idx, idx + 1),
                        reason: format!(
                            "operator {} reads attribute {attr} absent from schema",
                            sig.name
                        ),
                    });
                }
            }
        }
        schema = apply_schema_effect(&sig.schema_effect, schema);
        gran = sig.output.resolve(gran);
    }
    violations
}

pub fn apply_schema_effect(
    effect: &SchemaEffect,
    schema: Option<Arc<Schema>>,
) -> Option<Arc<Schema>> {
    match effect {
        SchemaEffect::Preserve => schema,
        SchemaEffect::Sets(s) => Some(s.clone()),
        SchemaEffect::Projects(attrs) => match schema {
            Some(s) => s.project(attrs).ok().map(Arc::new),
            None => None,
        },
    }
}

/// Tracks (granularity, schema) through a chain; used by the compiler to
/// propagate stage outputs downstream.
pub fn chain_output(
    ops: &[OpSignature],
    entry: Granularity,
    entry_schema: Option<Arc<Schema>>,
) -> (Granularity, Option<Arc<Schema>>) {
    let mut gran = entry;
    let mut schema = entry_schema;
    for sig in ops {
        schema = apply_schema_effect(&sig.schema_effect, schema);
        gran = sig.output.resolve(gran);
    }
    (gran, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item::{Payload, Record, Value};

    /// Identity operator: forwards items, labelling each with its index.
    pub(crate) struct IdentityOp {
        sig: OpSignature,
        queue: std::collections::VecDeque<IngestItem>,
        seq: u64,
    }

    impl IdentityOp {
        pub(crate) fn new(name: &str) -> Self {
            IdentityOp {
                sig: OpSignature::new(name, GranIn::Any, GranOut::SameAsInput),
                queue: Default::default(),
                seq: 0,
            }
        }
    }

    impl Operator for IdentityOp {
        fn signature(&self) -> &OpSignature {
            &self.sig
        }

        fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
            self.queue = items.into();
            Ok(())
        }

        fn has_next(&mut self) -> Result<bool, CoreError> {
            Ok(!self.queue.is_empty())
        }

        fn next(&mut self) -> Result<IngestItem, CoreError> {
            let item = self.queue.pop_front().ok_or_else(|| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: "next called after has_next returned false".into(),
            })?;
            let out = item.with_label(&self.sig.name, self.seq.to_string())?;
            self.seq += 1;
            Ok(out)
        }

        fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
            Ok(Vec::new())
        }
    }

    fn record_item(v: i64) -> IngestItem {
        let schema = Arc::new(Schema::parse("a:int64").unwrap());
        IngestItem::new(Payload::Record(Record::new(schema, vec![Value::Int(v)])))
    }

    #[test]
    fn drain_identity_labels_outputs() {
        let mut op = IdentityOp::new("id");
        let inputs: Vec<_> = (0..3).map(record_item).collect();
        let out = drain_operator(&mut op, inputs.clone()).unwrap();
        assert_eq!(out.len(), 3);
        for (i, item) in out.iter().enumerate() {
            assert_eq!(item.label("id"), Some(i.to_string().as_str()));
            assert_eq!(item.payload(), inputs[i].payload());
        }
    }

    #[test]
    fn drain_rejects_granularity_mismatch() {
        struct RecordOnly(OpSignature);
        impl Operator for RecordOnly {
            fn signature(&self) -> &OpSignature {
                &self.0
            }
            fn set_input(&mut self, _items: Vec<IngestItem>) -> Result<(), CoreError> {
                Ok(())
            }
            fn has_next(&mut self) -> Result<bool, CoreError> {
                Ok(false)
            }
            fn next(&mut self) -> Result<IngestItem, CoreError> {
                unreachable!()
            }
            fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
                Ok(Vec::new())
            }
        }
        let mut op = RecordOnly(OpSignature::new(
            "r",
            GranIn::Fixed(Granularity::Record),
            GranOut::SameAsInput,
        ));
        let err = drain_operator(&mut op, vec![IngestItem::file(vec![])]).unwrap_err();
        assert!(matches!(err, CoreError::GranularityMismatch { .. }));
    }

    #[test]
    fn validate_chain_flags_offending_pair() {
        let parse = {
            let mut s = OpSignature::new(
                "csv_parse",
                GranIn::Fixed(Granularity::File),
                GranOut::Fixed(Granularity::Record),
            );
            s.schema_effect =
                SchemaEffect::Sets(Arc::new(Schema::parse("a:int64,b:string").unwrap()));
            s
        };
        let hash = {
            let mut s = OpSignature::new(
                "hash_partition",
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = vec!["a".into()];
            s
        };
        let serialize = OpSignature::new(
            "serialize",
            GranIn::Fixed(Granularity::Block),
            GranOut::Fixed(Granularity::SerializedBlock),
        );

        let ok = validate_chain(&[parse.clone(), hash.clone()], Granularity::File, None);
        assert!(ok.is_empty());

        let bad = validate_chain(&[parse.clone(), serialize], Granularity::File, None);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].pair, (1, 2));

        // Attribute validation against the flowing schema.
        let mut needs_z = hash;
        needs_z.requires_attrs = vec!["z".into()];
        let bad = validate_chain(&[parse, needs_z], Granularity::File, None);
        assert_eq!(bad.len(), 1);
    }
}
