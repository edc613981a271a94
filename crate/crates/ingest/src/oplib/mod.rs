//! The built-in ingestion operator library.

pub mod chunk;
pub mod locate;
pub mod order;
pub mod parse;
pub mod partition;
pub mod repair;
pub mod replicate;
pub mod rule_check;
pub mod sample;
pub mod scope;
pub mod serialize;
pub mod store;

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use crate::cluster::{Cluster, StoredFile};
use crate::item::{fnv64, CoreError, Fnv64, Granularity, IngestItem, Schema};
use crate::layout::LayoutId;
use crate::op::{GranIn, GranOut, Operator, OpSignature, SchemaEffect, ShuffleMode};
use crate::plan::OpSpec;
use crate::pred::Predicate;

/// Everything an operator instance may need from the runtime. Cheap to
/// clone; shared state sits behind `Arc`.
#[derive(Clone)]
pub struct ExecCtx {
    pub seed: u64,
    /// Logical node index running this instance.
    pub unit: usize,
    pub dataset: String,
    pub cluster: Option<Arc<Cluster>>,
    /// Canonical filename slot order (plan.slots).
    pub slots: Arc<Vec<String>>,
    /// Operators whose labels vary per item (dropped at materialization).
    pub per_item_ops: Arc<HashSet<String>>,
    /// Replicator instances (store counts plan-level replication).
    pub replicate_ops: Arc<HashSet<String>>,
    /// Locator instances (store reads location ids from their labels).
    pub locate_ops: Arc<HashSet<String>>,
    /// Serializer instances (replica identity for disjoint placement).
    pub serialize_ops: Arc<HashSet<String>>,
    /// Manifest of stored files, appended by store operators.
    pub manifest: Arc<Mutex<Vec<StoredFile>>>,
    /// Divergent labels dropped at materialization, counted per operator.
    pub dropped_labels: Arc<Mutex<BTreeMap<String, u64>>>,
}

impl ExecCtx {
    pub fn for_tests(seed: u64) -> ExecCtx {
        ExecCtx {
            seed,
            unit: 0,
            dataset: "test".into(),
            cluster: None,
            slots: Arc::new(Vec::new()),
            per_item_ops: Arc::new(HashSet::new()),
            replicate_ops: Arc::new(HashSet::new()),
            locate_ops: Arc::new(HashSet::new()),
            serialize_ops: Arc::new(HashSet::new()),
            manifest: Arc::new(Mutex::new(Vec::new())),
            dropped_labels: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }
}

/// Finalizer with full avalanche; raw FNV output is too regular on short
/// sequential inputs to drive probability draws.
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic per-item randomness: a keyed hash of the plan seed, the
/// operator name and the item's lineage. Independent of arrival order and
/// of how work is spread over nodes.
pub fn item_hash(seed: u64, op_name: &str, item: &IngestItem) -> u64 {
    let mut h = Fnv64::new();
    h.update(&seed.to_le_bytes());
    h.update(op_name.as_bytes());
    for l in item.labels() {
        h.update(l.op_name.as_bytes());
        h.update(&[0x1f]);
        h.update(l.value.as_bytes());
        h.update(&[0x1e]);
    }
    mix64(h.finish())
}

/// Maps a hash to a uniform draw in [0, 1).
pub fn hash_to_unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Operator classes used by the rewrite rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Parse,
    Filter,
    Project,
    Replicate,
    Stochastic,
    Partition,
    Chunk,
    Order,
    Serialize,
    Check,
    Repair,
    Locate,
    Store,
    Identity,
}

pub const BUILTINS: &[&str] = &[
    "csv_parse",
    "scope_filter",
    "scope_project",
    "replicate_k",
    "replicate_bernoulli",
    "reservoir_sample",
    "stratified_sample",
    "partition",
    "chunk_by_size",
    "order_records",
    "serialize",
    "fd_check",
    "dc_check",
    "repair",
    "locate",
    "store",
    "identity",
];

pub fn is_builtin(id: &str) -> bool {
    BUILTINS.contains(&id)
}

/// Short names usable directly in programs without a registry entry.
pub fn resolve_alias(name: &str) -> Option<&'static str> {
    Some(match name {
        "chunk" | "chunk_by_size" => "chunk_by_size",
        "filter" | "scope_filter" => "scope_filter",
        "project" | "scope_project" => "scope_project",
        "partition" => "partition",
        "serialize" => "serialize",
        "replicate" | "replicate_k" => "replicate_k",
        "bernoulli" | "replicate_bernoulli" => "replicate_bernoulli",
        "reservoir" | "reservoir_sample" => "reservoir_sample",
        "stratified" | "stratified_sample" => "stratified_sample",
        "order" | "order_records" => "order_records",
        "csv_parse" => "csv_parse",
        "fd_check" => "fd_check",
        "dc_check" => "dc_check",
        "repair" => "repair",
        "locate" => "locate",
        "store" => "store",
        "identity" => "identity",
        _ => return None,
    })
}

/// Positional parameter names for inline operator arguments.
pub fn positional_params(builtin: &str) -> &'static [&'static str] {
    match builtin {
        "csv_parse" => &["delimiter", "schema"],
        "scope_filter" => &["pred"],
        "scope_project" => &["attrs"],
        "replicate_k" => &["k"],
        "replicate_bernoulli" => &["p"],
        "reservoir_sample" => &["capacity"],
        "stratified_sample" => &["rate", "by"],
        "partition" => &["kind", "key"],
        "chunk_by_size" => &["max_bytes"],
        "order_records" => &["key"],
        "serialize" => &["layout"],
        "fd_check" => &["lhs", "rhs"],
        "dc_check" => &["pred"],
        "repair" => &["attr"],
        "locate" => &["policy"],
        _ => &[],
    }
}

pub fn classify(spec: &OpSpec) -> OpClass {
    match spec.builtin.as_str() {
        "csv_parse" => OpClass::Parse,
        "scope_filter" => OpClass::Filter,
        "scope_project" => OpClass::Project,
        "replicate_k" => OpClass::Replicate,
        "replicate_bernoulli" | "reservoir_sample" | "stratified_sample" => OpClass::Stochastic,
        "partition" => OpClass::Partition,
        "chunk_by_size" => OpClass::Chunk,
        "order_records" => OpClass::Order,
        "serialize" => OpClass::Serialize,
        "fd_check" | "dc_check" => OpClass::Check,
        "repair" => OpClass::Repair,
        "locate" => OpClass::Locate,
        "store" => OpClass::Store,
        _ => OpClass::Identity,
    }
}

fn required_str<'a>(spec: &'a OpSpec, key: &str) -> Result<&'a str, CoreError> {
    spec.str(key).ok_or_else(|| CoreError::BadParam {
        name: format!("{}.{key}", spec.instance),
        reason: "missing required string parameter".into(),
    })
}

fn required_int(spec: &OpSpec, key: &str) -> Result<i64, CoreError> {
    spec.int(key).ok_or_else(|| CoreError::BadParam {
        name: format!("{}.{key}", spec.instance),
        reason: "missing required integer parameter".into(),
    })
}

fn required_float(spec: &OpSpec, key: &str) -> Result<f64, CoreError> {
    spec.float(key).ok_or_else(|| CoreError::BadParam {
        name: format!("{}.{key}", spec.instance),
        reason: "missing required numeric parameter".into(),
    })
}

fn comma_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn scope_shuffle(spec: &OpSpec) -> ShuffleMode {
    match spec.str("scope") {
        Some("global") => match spec.str("by") {
            Some(op) => ShuffleMode::ByLabel(op.to_string()),
            None => ShuffleMode::Gather,
        },
        _ => ShuffleMode::None,
    }
}

/// Computes the static signature of an operator instance, validating its
/// parameters in the process.
pub fn signature(spec: &OpSpec) -> Result<OpSignature, CoreError> {
    let name = spec.instance.clone();
    let sig = match spec.builtin.as_str() {
        "csv_parse" => {
            let schema = Arc::new(Schema::parse(required_str(spec, "schema")?)?);
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::File),
                GranOut::Fixed(Granularity::Record),
            );
            s.schema_effect = SchemaEffect::Sets(schema);
            s.per_item_label = true;
            s
        }
        "scope_filter" => {
            let pred = Predicate::parse(required_str(spec, "pred")?)?;
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = pred.attrs();
            s
        }
        "scope_project" => {
            let attrs = comma_list(required_str(spec, "attrs")?);
            if attrs.is_empty() {
                return Err(CoreError::BadParam {
                    name: format!("{}.attrs", spec.instance),
                    reason: "empty projection".into(),
                });
            }
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = attrs.clone();
            s.schema_effect = SchemaEffect::Projects(attrs);
            s
        }
        "replicate_k" => {
            let k = required_int(spec, "k")?;
            if k < 1 {
                return Err(CoreError::BadK(k));
            }
            OpSignature::new(name, GranIn::Any, GranOut::SameAsInput)
        }
        "replicate_bernoulli" => {
            let p = required_float(spec, "p")?;
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::BadParam {
                    name: format!("{}.p", spec.instance),
                    reason: format!("probability {p} outside [0, 1]"),
                });
            }
            OpSignature::new(name, GranIn::Any, GranOut::SameAsInput)
        }
        "reservoir_sample" => {
            let cap = required_int(spec, "capacity")?;
            if cap < 1 {
                return Err(CoreError::BadParam {
                    name: format!("{}.capacity", spec.instance),
                    reason: "capacity must be >= 1".into(),
                });
            }
            let mut s = OpSignature::new(name, GranIn::Any, GranOut::SameAsInput);
            s.shuffle = scope_shuffle(spec);
            s
        }
        "stratified_sample" => {
            let rate = required_float(spec, "rate")?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(CoreError::BadParam {
                    name: format!("{}.rate", spec.instance),
                    reason: format!("rate {rate} outside [0, 1]"),
                });
            }
            required_str(spec, "by")?;
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.blocking = true;
            s.shuffle = scope_shuffle(spec);
            s
        }
        "partition" => {
            let key = required_str(spec, "key")?.to_string();
            partition::validate_spec(spec)?;
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = vec![key];
            s
        }
        "chunk_by_size" => {
            let max = required_int(spec, "max_bytes")?;
            if max < 1 {
                return Err(CoreError::BadParam {
                    name: format!("{}.max_bytes", spec.instance),
                    reason: "max_bytes must be >= 1".into(),
                });
            }
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::Fixed(Granularity::Block),
            );
            s.blocking = true;
            s.per_item_label = true;
            s
        }
        "order_records" => {
            let key = required_str(spec, "key")?.to_string();
            let scope = spec.str("scope").unwrap_or("global");
            let mut s = match scope {
                "chunk" => OpSignature::new(
                    name,
                    GranIn::Fixed(Granularity::Block),
                    GranOut::SameAsInput,
                ),
                "global" => {
                    let mut s = OpSignature::new(
                        name,
                        GranIn::Fixed(Granularity::Record),
                        GranOut::SameAsInput,
                    );
                    s.blocking = true;
                    s
                }
                other => {
                    return Err(CoreError::BadParam {
                        name: format!("{}.scope", spec.instance),
                        reason: format!("unknown scope {other}"),
                    })
                }
            };
            s.requires_attrs = vec![key];
            s.per_item_label = true;
            s
        }
        "serialize" => {
            let layout_name = required_str(spec, "layout")?;
            let layout = LayoutId::parse_name(layout_name).ok_or_else(|| CoreError::BadParam {
                name: format!("{}.layout", spec.instance),
                reason: format!("unknown layout {layout_name}"),
            })?;
            if layout == LayoutId::SortedRow {
                required_str(spec, "key")?;
            }
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Block),
                GranOut::Fixed(Granularity::SerializedBlock),
            );
            s.parallel_mode = true;
            s
        }
        "fd_check" => {
            let lhs = required_str(spec, "lhs")?.to_string();
            let rhs = required_str(spec, "rhs")?.to_string();
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = vec![lhs, rhs];
            s.blocking = true;
            s.shuffle = scope_shuffle(spec);
            s
        }
        "dc_check" => {
            let pred = Predicate::parse(required_str(spec, "pred")?)?;
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = pred.attrs();
            s
        }
        "repair" => {
            let attr = required_str(spec, "attr")?.to_string();
            repair::validate_spec(spec)?;
            let mut s = OpSignature::new(
                name,
                GranIn::Fixed(Granularity::Record),
                GranOut::SameAsInput,
            );
            s.requires_attrs = vec![attr];
            s
        }
        "locate" => {
            locate::validate_spec(spec)?;
            OpSignature::new(name, GranIn::Any, GranOut::SameAsInput)
        }
        "store" => {
            let mut s = OpSignature::new(
                name,
                GranIn::OneOf(vec![Granularity::Block, Granularity::SerializedBlock]),
                GranOut::SameAsInput,
            );
            if spec.int("erasure_k").is_some() {
                // Striping is a whole-dataset decision; gather first.
                s.shuffle = ShuffleMode::Gather;
                s.blocking = true;
            }
            s
        }
        "identity" => {
            let mut s = OpSignature::new(name, GranIn::Any, GranOut::SameAsInput);
            s.per_item_label = true;
            s
        }
        other => {
            return Err(CoreError::BadParam {
                name: other.to_string(),
                reason: "unknown builtin operator".into(),
            })
        }
    };
    Ok(sig)
}

/// Constructs a fresh operator instance.
pub fn instantiate(spec: &OpSpec, ctx: &ExecCtx) -> Result<Box<dyn Operator>, CoreError> {
    let sig = signature(spec)?;
    Ok(match spec.builtin.as_str() {
        "csv_parse" => Box::new(parse::CsvParse::new(spec, sig)?),
        "scope_filter" => Box::new(scope::ScopeFilter::new(spec, sig)?),
        "scope_project" => Box::new(scope::ScopeProject::new(spec, sig)?),
        "replicate_k" => Box::new(replicate::ReplicateK::new(spec, sig)?),
        "replicate_bernoulli" => Box::new(replicate::Bernoulli::new(spec, sig, ctx)?),
        "reservoir_sample" => Box::new(sample::Reservoir::new(spec, sig, ctx)?),
        "stratified_sample" => Box::new(sample::Stratified::new(spec, sig, ctx)?),
        "partition" => Box::new(partition::PartitionLogical::new(spec, sig)?),
        "chunk_by_size" => Box::new(chunk::ChunkBySize::new(spec, sig, ctx)?),
        "order_records" => Box::new(order::OrderRecords::new(spec, sig)?),
        "serialize" => Box::new(serialize::SerializeBlock::new(spec, sig)?),
        "fd_check" => Box::new(rule_check::FdCheck::new(spec, sig)?),
        "dc_check" => Box::new(rule_check::DcCheck::new(spec, sig)?),
        "repair" => Box::new(repair::SinglePassRepair::new(spec, sig)?),
        "locate" => Box::new(locate::Locate::new(spec, sig, ctx)?),
        "store" => Box::new(store::StoreBlocks::new(spec, sig, ctx)?),
        "identity" => Box::new(Identity::new(sig)),
        other => {
            return Err(CoreError::BadParam {
                name: other.to_string(),
                reason: "unknown builtin operator".into(),
            })
        }
    })
}

/// Pass-through operator labelling each item with its sequence index.
pub struct Identity {
    sig: OpSignature,
    queue: std::collections::VecDeque<IngestItem>,
    seq: u64,
}

impl Identity {
    pub fn new(sig: OpSignature) -> Self {
        Identity {
            sig,
            queue: Default::default(),
            seq: 0,
        }
    }
}

impl Operator for Identity {
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
        let item = self
            .queue
            .pop_front()
            .ok_or_else(|| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: "next called with no pending output".into(),
            })?;
        let out = item.with_label(&self.sig.name, self.seq.to_string())?;
        self.seq += 1;
        Ok(out)
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        Ok(Vec::new())
    }
}

/// The dummy pass-through substituted for a repeatedly failing operator:
/// forwards inputs, labelling each with the reserved failure value.
pub struct DummyPassThrough {
    sig: OpSignature,
    queue: std::collections::VecDeque<IngestItem>,
}

impl DummyPassThrough {
    pub fn replacing(op_name: &str) -> Self {
        DummyPassThrough {
            sig: OpSignature::new(op_name, GranIn::Any, GranOut::SameAsInput),
            queue: Default::default(),
        }
    }
}

impl Operator for DummyPassThrough {
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
        let item = self
            .queue
            .pop_front()
            .ok_or_else(|| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: "next called with no pending output".into(),
            })?;
        item.with_label(&self.sig.name, crate::item::SKIPPED_LABEL)
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        Ok(Vec::new())
    }
}

/// Group key for materialization: the item's labels minus those assigned by
/// per-item operators (line indexes and the like never define groups).
pub fn group_key(item: &IngestItem, per_item_ops: &HashSet<String>) -> Vec<(String, String)> {
    item.labels()
        .iter()
        .filter(|l| !per_item_ops.contains(&l.op_name))
        .map(|l| (l.op_name.clone(), l.value.clone()))
        .collect()
}

pub fn hash_group_key(key: &[(String, String)]) -> u64 {
    let mut h = Fnv64::new();
    for (op, value) in key {
        h.update(op.as_bytes());
        h.update(&[0x1f]);
        h.update(value.as_bytes());
        h.update(&[0x1e]);
    }
    h.finish()
}

/// Stable per-record fingerprint used by deterministic samplers.
pub fn record_fingerprint(seed: u64, op_name: &str, item: &IngestItem) -> u64 {
    let mut h = Fnv64::new();
    h.update(&item_hash(seed, op_name, item).to_le_bytes());
    if let crate::item::Payload::Record(r) = item.payload() {
        for v in &r.values {
            h.update(v.canonical().as_bytes());
            h.update(&[0x1d]);
        }
    }
    h.finish()
}

pub fn canonical_key_bytes(value: &crate::item::Value) -> Vec<u8> {
    value.canonical().into_bytes()
}

pub fn stable_key_hash(value: &crate::item::Value) -> u64 {
    fnv64(&canonical_key_bytes(value))
}
