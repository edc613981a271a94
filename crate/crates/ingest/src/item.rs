//! Ingest data items: the labelled units of data that flow through an
//! ingestion plan, at one of four granularities.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved label value assigned by the dummy pass-through operator after an
/// operator was skipped due to repeated failure.
pub const SKIPPED_LABEL: &str = "-1";

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("granularity mismatch: operator {op} expects {expected}, got {actual}")]
    GranularityMismatch {
        op: String,
        expected: String,
        actual: String,
    },
    #[error("duplicate label for operator {op}")]
    DuplicateLabel { op: String },
    #[error("operator {op} failed: {reason}")]
    OperatorFailure { op: String, reason: String },
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("schema arity mismatch: every input line failed to parse")]
    SchemaArityMismatch,
    #[error("replication count must be >= 1, got {0}")]
    BadK(i64),
    #[error("item is missing required label {0}")]
    MissingLabel(String),
    #[error("item is missing its stratum partition label {0}")]
    MissingStratumLabel(String),
    #[error("unsupported type: {0}")]
    UnsupportedType(String),
    #[error("bad parameter {name}: {reason}")]
    BadParam { name: String, reason: String },
}

/// Granularity of an ingest data item. Coarseness is totally ordered
/// (File > Block >= SerializedBlock > Record) and is used only for
/// materialization decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    File,
    Record,
    Block,
    SerializedBlock,
}

impl Granularity {
    pub fn coarseness(self) -> u8 {
        match self {
            Granularity::File => 3,
            Granularity::Block => 2,
            Granularity::SerializedBlock => 1,
            Granularity::Record => 0,
        }
    }

    /// Pipelining class: a serialized block is a representation change of a
    /// block, not a granularity change, so both fall in the same class.
    pub fn pipeline_class(self) -> u8 {
        match self {
            Granularity::File => 2,
            Granularity::Block | Granularity::SerializedBlock => 1,
            Granularity::Record => 0,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Granularity::File => "file",
            Granularity::Record => "record",
            Granularity::Block => "block",
            Granularity::SerializedBlock => "serialized-block",
        };
        f.write_str(s)
    }
}

/// A lineage label: which operator processed the item and the ID it assigned.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub op_name: String,
    pub value: String,
}

impl Label {
    pub fn new(op_name: impl Into<String>, value: impl Into<String>) -> Self {
        Label {
            op_name: op_name.into(),
            value: value.into(),
        }
    }
}

/// Primitive attribute types for flat record schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldType {
    Int64,
    Float64,
    Date,
    Str,
}

impl FieldType {
    pub fn name(self) -> &'static str {
        match self {
            FieldType::Int64 => "int64",
            FieldType::Float64 => "float64",
            FieldType::Date => "date",
            FieldType::Str => "string",
        }
    }

    pub fn parse_name(s: &str) -> Option<FieldType> {
        match s {
            "int64" => Some(FieldType::Int64),
            "float64" => Some(FieldType::Float64),
            "date" => Some(FieldType::Date),
            "string" => Some(FieldType::Str),
            _ => None,
        }
    }
}

/// A typed field value. Dates are stored as days since 1970-01-01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Date(i64),
    Str(String),
}

impl Value {
    pub fn field_type(&self) -> FieldType {
        match self {
            Value::Int(_) => FieldType::Int64,
            Value::Float(_) => FieldType::Float64,
            Value::Date(_) => FieldType::Date,
            Value::Str(_) => FieldType::Str,
        }
    }

    /// Canonical textual form; round-trips through `parse_as` for all values
    /// the engine produces.
    pub fn canonical(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format!("{v:?}"),
            Value::Date(days) => days_to_date_string(*days),
            Value::Str(s) => s.clone(),
        }
    }

    /// Strings are taken verbatim (fixed-width padding is significant);
    /// numeric and date fields tolerate surrounding whitespace.
    pub fn parse_as(ty: FieldType, text: &str) -> Option<Value> {
        match ty {
            FieldType::Int64 => text.trim().parse::<i64>().ok().map(Value::Int),
            FieldType::Float64 => text.trim().parse::<f64>().ok().map(Value::Float),
            FieldType::Date => date_string_to_days(text.trim()).map(Value::Date),
            FieldType::Str => Some(Value::Str(text.to_string())),
        }
    }

    /// Ordering used by sorters, range partitioning and predicates. Values of
    /// different types never compare.
    pub fn compare(&self, other: &Value) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Float(a), Value::Float(b)) => a.partial_cmp(b),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            (Value::Int(a), Value::Float(b)) => (*a as f64).partial_cmp(b),
            (Value::Float(a), Value::Int(b)) => a.partial_cmp(&(*b as f64)),
            _ => None,
        }
    }
}

pub fn days_to_date_string(days: i64) -> String {
    let date = chrono::NaiveDate::from_num_days_from_ce_opt(days as i32 + 719_163)
        .unwrap_or_else(|| chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
    date.format("%Y-%m-%d").to_string()
}

pub fn date_string_to_days(s: &str) -> Option<i64> {
    use chrono::Datelike;
    let date = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(date.num_days_from_ce() as i64 - 719_163)
}

/// A flat record schema: ordered attributes plus an optional key subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<(String, FieldType)>,
    pub key: Option<Vec<String>>,
}

impl Schema {
    pub fn new(attributes: Vec<(String, FieldType)>) -> Self {
        Schema {
            attributes,
            key: None,
        }
    }

    /// Parses the compact textual form `name:type,name:type,...`.
    pub fn parse(text: &str) -> Result<Schema, CoreError> {
        let mut attributes = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (name, ty) = part.split_once(':').ok_or_else(|| CoreError::BadParam {
                name: "schema".into(),
                reason: format!("attribute `{part}` is not name:type"),
            })?;
            let ty = FieldType::parse_name(ty.trim()).ok_or_else(|| CoreError::BadParam {
                name: "schema".into(),
                reason: format!("unknown type `{ty}`"),
            })?;
            attributes.push((name.trim().to_string(), ty));
        }
        if attributes.is_empty() {
            return Err(CoreError::BadParam {
                name: "schema".into(),
                reason: "schema has no attributes".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &attributes {
            if !seen.insert(name.clone()) {
                return Err(CoreError::BadParam {
                    name: "schema".into(),
                    reason: format!("duplicate attribute `{name}`"),
                });
            }
        }
        Ok(Schema::new(attributes))
    }

    pub fn index_of(&self, attr: &str) -> Option<usize> {
        self.attributes.iter().position(|(n, _)| n == attr)
    }

    pub fn require(&self, attr: &str) -> Result<usize, CoreError> {
        self.index_of(attr)
            .ok_or_else(|| CoreError::UnknownAttribute(attr.to_string()))
    }

    pub fn project(&self, attrs: &[String]) -> Result<Schema, CoreError> {
        let mut out = Vec::with_capacity(attrs.len());
        for a in attrs {
            let idx = self.require(a)?;
            out.push(self.attributes[idx].clone());
        }
        Ok(Schema::new(out))
    }

    /// Stable 64-bit schema fingerprint, stored in serialized block headers.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, ty) in &self.attributes {
            h.update(name.as_bytes());
            h.update(&[0xfe]);
            h.update(ty.name().as_bytes());
            h.update(&[0xff]);
        }
        h.finish()
    }
}

/// A typed in-memory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub schema: Arc<Schema>,
    pub values: Vec<Value>,
}

impl Record {
    pub fn new(schema: Arc<Schema>, values: Vec<Value>) -> Self {
        debug_assert_eq!(schema.attributes.len(), values.len());
        Record { schema, values }
    }

    pub fn get(&self, attr: &str) -> Result<&Value, CoreError> {
        let idx = self.schema.require(attr)?;
        Ok(&self.values[idx])
    }

    /// Encoded size under the row-wise binary layout; the chunker packs by
    /// this measure.
    pub fn encoded_size(&self) -> usize {
        self.values
            .iter()
            .map(|v| match v {
                Value::Int(_) | Value::Float(_) | Value::Date(_) => 8,
                Value::Str(s) => 4 + s.len(),
            })
            .sum()
    }
}

/// A block of records sharing one schema, pre-serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub schema: Arc<Schema>,
    pub records: Vec<Record>,
}

impl Block {
    pub fn encoded_size(&self) -> usize {
        self.records.iter().map(Record::encoded_size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    File(Vec<u8>),
    Record(Record),
    Block(Block),
    Serialized(Vec<u8>),
}

/// A labelled unit of data flowing through an ingestion plan. Items are
/// immutable after construction; label attachment produces a new item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestItem {
    payload: Payload,
    labels: Vec<Label>,
}

impl IngestItem {
    pub fn new(payload: Payload) -> Self {
        IngestItem {
            payload,
            labels: Vec::new(),
        }
    }

    pub fn file(bytes: Vec<u8>) -> Self {
        IngestItem::new(Payload::File(bytes))
    }

    pub fn record(record: Record) -> Self {
        IngestItem::new(Payload::Record(record))
    }

    pub fn block(block: Block) -> Self {
        IngestItem::new(Payload::Block(block))
    }

    pub fn serialized(bytes: Vec<u8>) -> Self {
        IngestItem::new(Payload::Serialized(bytes))
    }

    pub fn granularity(&self) -> Granularity {
        match &self.payload {
            Payload::File(_) => Granularity::File,
            Payload::Record(_) => Granularity::Record,
            Payload::Block(_) => Granularity::Block,
            Payload::Serialized(_) => Granularity::SerializedBlock,
        }
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_payload(self) -> Payload {
        self.payload
    }

    /// Replaces the payload, keeping lineage. Used by transforming operators.
    pub fn map_payload(&self, payload: Payload) -> IngestItem {
        IngestItem {
            payload,
            labels: self.labels.clone(),
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Appends one label; labels are append-only and unique per operator.
    pub fn with_label(
        &self,
        op_name: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<IngestItem, CoreError> {
        let op_name = op_name.into();
        if self.labels.iter().any(|l| l.op_name == op_name) {
            return Err(CoreError::DuplicateLabel { op: op_name });
        }
        let mut labels = self.labels.clone();
        labels.push(Label::new(op_name, value.into()));
        Ok(IngestItem {
            payload: self.payload.clone(),
            labels,
        })
    }

    /// Returns the value assigned by `op_name`, if any.
    pub fn label(&self, op_name: &str) -> Option<&str> {
        self.labels
            .iter()
            .find(|l| l.op_name == op_name)
            .map(|l| l.value.as_str())
    }

    pub fn expect_record(&self, op: &str) -> Result<&Record, CoreError> {
        match &self.payload {
            Payload::Record(r) => Ok(r),
            other => Err(CoreError::GranularityMismatch {
                op: op.to_string(),
                expected: "record".into(),
                actual: granularity_of(other).to_string(),
            }),
        }
    }

    pub fn expect_block(&self, op: &str) -> Result<&Block, CoreError> {
        match &self.payload {
            Payload::Block(b) => Ok(b),
            other => Err(CoreError::GranularityMismatch {
                op: op.to_string(),
                expected: "block".into(),
                actual: granularity_of(other).to_string(),
            }),
        }
    }
}

fn granularity_of(p: &Payload) -> Granularity {
    match p {
        Payload::File(_) => Granularity::File,
        Payload::Record(_) => Granularity::Record,
        Payload::Block(_) => Granularity::Block,
        Payload::Serialized(_) => Granularity::SerializedBlock,
    }
}

/// A record that violated a data-quality rule, routed to the reject
/// side-channel with enough context to re-verify independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub rule: String,
    pub reason: String,
    /// Raw text when the violation happened before parsing, typed values after.
    pub raw: Option<String>,
    pub record: Option<Record>,
}

/// 64-bit FNV-1a, the engine's format-stable content digest.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.update(bytes);
    h.finish()
}

/// Labels shared (same operator, same value) by every item, preserving the
/// first item's order. This is what survives onto a materialized block.
pub fn common_labels(items: &[IngestItem]) -> Vec<Label> {
    let Some(first) = items.first() else {
        return Vec::new();
    };
    first
        .labels()
        .iter()
        .filter(|l| {
            items[1..]
                .iter()
                .all(|it| it.label(&l.op_name) == Some(l.value.as_str()))
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_ab() -> Arc<Schema> {
        Arc::new(Schema::parse("a:int64,b:string").unwrap())
    }

    #[test]
    fn attach_label_appends_in_order() {
        let item = IngestItem::file(vec![1, 2, 3]);
        let item = item.with_label("replicate1", "2").unwrap();
        assert_eq!(item.labels(), &[Label::new("replicate1", "2")]);

        let item = IngestItem::file(vec![])
            .with_label("parse", "7")
            .unwrap()
            .with_label("hash", "3")
            .unwrap();
        assert_eq!(
            item.labels(),
            &[Label::new("parse", "7"), Label::new("hash", "3")]
        );
    }

    #[test]
    fn attach_label_rejects_duplicates() {
        let item = IngestItem::file(vec![]).with_label("parse", "7").unwrap();
        let err = item.with_label("parse", "9").unwrap_err();
        assert!(matches!(err, CoreError::DuplicateLabel { .. }));
    }

    #[test]
    fn get_label_present_and_absent() {
        let item = IngestItem::file(vec![]).with_label("replicate1", "1").unwrap();
        assert_eq!(item.label("replicate1"), Some("1"));
        assert_eq!(item.label("x"), None);
    }

    #[test]
    fn granularity_ordering() {
        assert!(Granularity::File.coarseness() > Granularity::Block.coarseness());
        assert!(Granularity::Block.coarseness() >= Granularity::SerializedBlock.coarseness());
        assert!(Granularity::SerializedBlock.coarseness() > Granularity::Record.coarseness());
        assert_eq!(
            Granularity::Block.pipeline_class(),
            Granularity::SerializedBlock.pipeline_class()
        );
    }

    #[test]
    fn date_round_trip() {
        for s in ["1970-01-01", "1992-03-15", "2026-08-10", "1969-12-31"] {
            let days = date_string_to_days(s).unwrap();
            assert_eq!(days_to_date_string(days), s);
        }
        assert_eq!(date_string_to_days("1970-01-01"), Some(0));
        assert_eq!(date_string_to_days("1970-01-02"), Some(1));
    }

    #[test]
    fn value_canonical_round_trip() {
        let vals = [
            Value::Int(-42),
            Value::Float(0.1),
            Value::Float(5.0),
            Value::Date(8192),
            Value::Str("hello world".into()),
        ];
        for v in vals {
            let text = v.canonical();
            let back = Value::parse_as(v.field_type(), &text).unwrap();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn schema_parse_rejects_duplicates_and_unknown_types() {
        assert!(Schema::parse("a:int64,a:string").is_err());
        assert!(Schema::parse("a:int128").is_err());
        assert!(Schema::parse("").is_err());
    }

    #[test]
    fn record_encoded_size() {
        let schema = schema_ab();
        let r = Record::new(
            schema,
            vec![Value::Int(1), Value::Str("abc".into())],
        );
        assert_eq!(r.encoded_size(), 8 + 4 + 3);
    }

    #[test]
    fn common_labels_keeps_shared_prefix_order() {
        let a = IngestItem::file(vec![])
            .with_label("input", "0")
            .unwrap()
            .with_label("parse", "0")
            .unwrap()
            .with_label("replicate", "1")
            .unwrap();
        let b = IngestItem::file(vec![])
            .with_label("input", "0")
            .unwrap()
            .with_label("parse", "1")
            .unwrap()
            .with_label("replicate", "1")
            .unwrap();
        let common = common_labels(&[a, b]);
        assert_eq!(
            common,
            vec![Label::new("input", "0"), Label::new("replicate", "1")]
        );
    }

    #[test]
    fn fnv_is_stable() {
        // Reference vectors for 64-bit FNV-1a.
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
