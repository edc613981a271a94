//! Ingestion-aware data access: filenames as lineage, plan persistence and
//! recall, replica/block filtering, key-based (co-)splitting, pushdown
//! deserialization, and minimal query operators over splits.

pub mod name;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{Cluster, ClusterError, NodeId};
use crate::item::{Record, Schema, Value};
use crate::lang::{self, LangError};
use crate::layout::{decode_block, IoStats, LayoutError};
use crate::plan::IngestPlan;
use crate::pred::Predicate;

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("unknown plan {0}")]
    UnknownPlan(String),
    #[error("plan has no operator named {0}")]
    UnknownOperatorName(String),
    #[error("dataset {dataset} was not partitioned on {key} at ingest")]
    NotPartitionedOnKey { dataset: String, key: String },
    #[error("incompatible partitioning: {0}")]
    IncompatiblePartitioning(String),
    #[error("no schema derivable for stored file {0}")]
    UnknownSchema(String),
    #[error(transparent)]
    Name(#[from] name::NameError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

fn plan_path(cluster: &Cluster, dataset: &str) -> std::path::PathBuf {
    cluster.dfs_dir().join("plans").join(format!("{dataset}.plan"))
}

fn registry_path(cluster: &Cluster, dataset: &str) -> std::path::PathBuf {
    cluster
        .dfs_dir()
        .join("plans")
        .join(format!("{dataset}.registry"))
}

/// Persists a plan next to its data: the canonical program text plus the
/// registry parameter bindings, enough to re-instantiate every operator.
pub fn persist_plan(
    plan: &IngestPlan,
    registry: &lang::Registry,
    cluster: &Cluster,
    dataset: &str,
) -> Result<(), AccessError> {
    let path = plan_path(cluster, dataset);
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, lang::render_plan(plan))?;
    std::fs::write(registry_path(cluster, dataset), registry.render())?;
    Ok(())
}

/// Reloads a persisted plan; renders identically to the original.
pub fn load_plan(
    cluster: &Cluster,
    dataset: &str,
) -> Result<(IngestPlan, lang::Registry), AccessError> {
    let path = plan_path(cluster, dataset);
    if !path.exists() {
        return Err(AccessError::UnknownPlan(dataset.to_string()));
    }
    let text = std::fs::read_to_string(&path)?;
    let registry = lang::Registry::parse(&std::fs::read_to_string(registry_path(
        cluster, dataset,
    ))?)?;
    let program = lang::parse_program(&text)?;
    let plan = lang::compile_to_plan(&program, &registry, &lang::CompileOptions::default())?;
    Ok((plan, registry))
}

/// Decoded slot values of a stored file, aligned with `plan.slots`.
pub fn file_labels(plan: &IngestPlan, filename: &str) -> Result<Vec<String>, AccessError> {
    let values = name::decode_name(filename)?;
    if values.len() != plan.slots.len() {
        return Err(AccessError::Name(name::NameError::MalformedName(
            filename.to_string(),
        )));
    }
    Ok(values)
}

/// Stored files whose label for `op_name` equals `value`; the label
/// position comes from the loaded plan's canonical operator order, so no
/// metadata beyond the listing is needed.
pub fn filter_replica(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    op_name: &str,
    value: &str,
) -> Result<Vec<String>, AccessError> {
    let slot = plan
        .slot_of(op_name)
        .ok_or_else(|| AccessError::UnknownOperatorName(op_name.to_string()))?;
    let mut out = Vec::new();
    for f in cluster.list_dataset(dataset) {
        if let Ok(values) = file_labels(plan, &f.name) {
            if values[slot] == value {
                out.push(f.name);
            }
        }
    }
    Ok(out)
}

/// Filters blocks within an already-selected replica family.
pub fn filter_block(
    plan: &IngestPlan,
    family: &[String],
    op_name: &str,
    value: &str,
) -> Result<Vec<String>, AccessError> {
    let slot = plan
        .slot_of(op_name)
        .ok_or_else(|| AccessError::UnknownOperatorName(op_name.to_string()))?;
    let mut out = Vec::new();
    for f in family {
        if let Ok(values) = file_labels(plan, f) {
            if values[slot] == value {
                out.push(f.clone());
            }
        }
    }
    Ok(out)
}

/// Serializer instances of a plan, with their slot indexes.
fn serializer_slots(plan: &IngestPlan) -> Vec<(usize, String)> {
    plan.slots
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            plan.op(s).map(|spec| spec.builtin == "serialize").unwrap_or(false)
        })
        .map(|(i, s)| (i, s.clone()))
        .collect()
}

/// Files serialized in the given layout (helper over filter_replica).
pub fn filter_replica_by_layout(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    layout: &str,
) -> Result<Vec<String>, AccessError> {
    let mut out = Vec::new();
    for (slot, _) in serializer_slots(plan) {
        for f in cluster.list_dataset(dataset) {
            if let Ok(values) = file_labels(plan, &f.name) {
                if values[slot] == layout && !out.contains(&f.name) {
                    out.push(f.name);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Partition operator of the plan keyed on `key`.
fn partition_op_for_key<'a>(plan: &'a IngestPlan, key: &str) -> Option<&'a crate::plan::OpSpec> {
    plan.ops
        .values()
        .find(|spec| spec.builtin == "partition" && spec.str("key") == Some(key))
}

/// Files of the replica family partitioned on `key` (helper).
pub fn filter_replica_by_partitioning(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    key: &str,
) -> Result<Vec<String>, AccessError> {
    let spec = partition_op_for_key(plan, key).ok_or_else(|| AccessError::NotPartitionedOnKey {
        dataset: dataset.to_string(),
        key: key.to_string(),
    })?;
    let slot = plan.slot_of(&spec.instance).unwrap();
    let mut out = Vec::new();
    for f in cluster.list_dataset(dataset) {
        if let Ok(values) = file_labels(plan, &f.name) {
            if !values[slot].is_empty() {
                out.push(f.name);
            }
        }
    }
    Ok(out)
}

/// A unit of query-time work: all blocks of one partition value, with the
/// node holding most of their primary replicas.
#[derive(Debug, Clone, Serialize)]
pub struct Split {
    pub key_value: String,
    pub blocks: Vec<String>,
    pub bytes: u64,
    pub preferred_node: Option<usize>,
}

fn preferred_node(cluster: &Cluster, dataset: &str, blocks: &[String]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for b in blocks {
        if let Some(meta) = cluster.file_meta(dataset, b) {
            if let Some(primary) = meta.replicas.first() {
                *counts.entry(primary.node.0).or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(node, _)| node)
}

/// One split per partition value of the ingest-time partitioning on `key`;
/// a split larger than `max_split_size` bytes is subdivided, but blocks of
/// one partition never mix with another's.
pub fn split_by_key(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    key: &str,
    max_split_size: Option<u64>,
) -> Result<Vec<Split>, AccessError> {
    let spec = partition_op_for_key(plan, key).ok_or_else(|| AccessError::NotPartitionedOnKey {
        dataset: dataset.to_string(),
        key: key.to_string(),
    })?;
    let slot = plan.slot_of(&spec.instance).unwrap();
    let mut groups: BTreeMap<String, Vec<(String, u64)>> = BTreeMap::new();
    for f in cluster.list_dataset(dataset) {
        if let Ok(values) = file_labels(plan, &f.name) {
            if !values[slot].is_empty() {
                groups
                    .entry(values[slot].clone())
                    .or_default()
                    .push((f.name, f.size));
            }
        }
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    });
    let mut splits = Vec::new();
    for key_value in keys {
        let blocks = &groups[&key_value];
        let mut current: Vec<String> = Vec::new();
        let mut current_bytes = 0u64;
        let flush = |current: &mut Vec<String>, bytes: &mut u64, splits: &mut Vec<Split>| {
            if current.is_empty() {
                return;
            }
            let blocks = std::mem::take(current);
            let preferred = preferred_node(cluster, dataset, &blocks);
            splits.push(Split {
                key_value: key_value.clone(),
                blocks,
                bytes: *bytes,
                preferred_node: preferred,
            });
            *bytes = 0;
        };
        for (name, size) in blocks {
            if let Some(max) = max_split_size {
                if !current.is_empty() && current_bytes + size > max {
                    flush(&mut current, &mut current_bytes, &mut splits);
                }
            }
            current.push(name.clone());
            current_bytes += size;
        }
        flush(&mut current, &mut current_bytes, &mut splits);
    }
    Ok(splits)
}

/// A co-split: same-partition blocks across co-partitioned datasets.
#[derive(Debug, Clone, Serialize)]
pub struct CoSplit {
    pub key_value: String,
    pub blocks: Vec<Vec<String>>,
}

fn partition_fingerprint(spec: &crate::plan::OpSpec) -> String {
    format!(
        "{}|{}|{}|{}",
        spec.str("kind").unwrap_or("hash"),
        spec.int("buckets").unwrap_or(1),
        spec.str("bounds").unwrap_or(""),
        spec.str("values").unwrap_or("")
    )
}

/// Splits several datasets on their respective keys, pairing blocks with
/// equal partition ids. The datasets must share the partition function and
/// arity; joins over the result need no repartitioning.
pub fn co_split_by_key(
    cluster: &Cluster,
    parts: &[(&IngestPlan, &str, &str)],
) -> Result<Vec<CoSplit>, AccessError> {
    assert!(parts.len() >= 2, "co-split needs at least two datasets");
    let mut specs = Vec::new();
    for (plan, dataset, key) in parts {
        let spec = partition_op_for_key(plan, key).ok_or_else(|| {
            AccessError::NotPartitionedOnKey {
                dataset: dataset.to_string(),
                key: key.to_string(),
            }
        })?;
        specs.push(spec);
    }
    let first = partition_fingerprint(specs[0]);
    for spec in &specs[1..] {
        let other = partition_fingerprint(spec);
        if other != first {
            return Err(AccessError::IncompatiblePartitioning(format!(
                "{first} vs {other}"
            )));
        }
    }
    let mut per_dataset: Vec<BTreeMap<String, Vec<String>>> = Vec::new();
    for (idx, (plan, dataset, _)) in parts.iter().enumerate() {
        let slot = plan.slot_of(&specs[idx].instance).unwrap();
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for f in cluster.list_dataset(dataset) {
            if let Ok(values) = file_labels(plan, &f.name) {
                if !values[slot].is_empty() {
                    groups.entry(values[slot].clone()).or_default().push(f.name);
                }
            }
        }
        per_dataset.push(groups);
    }
    let mut all_keys: Vec<String> = per_dataset
        .iter()
        .flat_map(|g| g.keys().cloned())
        .collect();
    all_keys.sort_by(|a, b| match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    });
    all_keys.dedup();
    Ok(all_keys
        .into_iter()
        .map(|key_value| CoSplit {
            blocks: per_dataset
                .iter()
                .map(|g| g.get(&key_value).cloned().unwrap_or_default())
                .collect(),
            key_value,
        })
        .collect())
}

/// Record schema inside a stored file, recomputed from the plan: the schema
/// flowing into the file's serializer (or into the store, for blocks the
/// store serialized implicitly).
pub struct SchemaResolver {
    flows: BTreeMap<String, Option<Arc<Schema>>>,
    serializer_slots: Vec<(usize, String)>,
    store_ops: Vec<String>,
}

impl SchemaResolver {
    pub fn new(plan: &IngestPlan) -> Result<SchemaResolver, AccessError> {
        Ok(SchemaResolver {
            flows: lang::compile::schema_into_ops(plan)?,
            serializer_slots: serializer_slots(plan),
            store_ops: plan
                .ops
                .values()
                .filter(|s| s.builtin == "store")
                .map(|s| s.instance.clone())
                .collect(),
        })
    }

    pub fn schema_for(
        &self,
        plan: &IngestPlan,
        filename: &str,
    ) -> Result<Arc<Schema>, AccessError> {
        let values = file_labels(plan, filename)?;
        for (slot, instance) in &self.serializer_slots {
            if !values[*slot].is_empty() {
                if let Some(Some(schema)) = self.flows.get(instance) {
                    return Ok(schema.clone());
                }
            }
        }
        for instance in &self.store_ops {
            if let Some(slot) = plan.slot_of(instance) {
                if !values[slot].is_empty() {
                    if let Some(Some(schema)) = self.flows.get(instance) {
                        return Ok(schema.clone());
                    }
                }
            }
        }
        Err(AccessError::UnknownSchema(filename.to_string()))
    }
}

/// Reads and deserializes stored blocks with projection/selection pushed
/// down into the layout reads; `stats` reflects the bytes actually read.
pub fn read_blocks(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    files: &[String],
    projection: Option<&[String]>,
    selection: Option<&Predicate>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, AccessError> {
    let resolver = SchemaResolver::new(plan)?;
    let mut out = Vec::new();
    for file in files {
        let schema = resolver.schema_for(plan, file)?;
        let bytes = cluster.get_block(dataset, file)?;
        out.extend(decode_block(&bytes, &schema, projection, selection, stats)?);
    }
    Ok(out)
}

/// Scan with optional selection and projection over a set of files.
pub fn scan_select_project(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    files: &[String],
    projection: Option<&[String]>,
    selection: Option<&Predicate>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, AccessError> {
    read_blocks(cluster, plan, dataset, files, projection, selection, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Count,
    SumInt,
}

/// Groups by `key` over key-partitioned splits and aggregates locally; the
/// partitioning guarantees a key never straddles splits, so no repartition
/// (and no shuffle) happens.
pub fn aggregate_by_key(
    cluster: &Cluster,
    plan: &IngestPlan,
    dataset: &str,
    splits: &[Split],
    key: &str,
    agg: Aggregate,
    agg_attr: Option<&str>,
    stats: &mut IoStats,
) -> Result<BTreeMap<String, i64>, AccessError> {
    let mut out: BTreeMap<String, i64> = BTreeMap::new();
    let projection: Vec<String> = match (agg, agg_attr) {
        (Aggregate::SumInt, Some(attr)) => vec![key.to_string(), attr.to_string()],
        _ => vec![key.to_string()],
    };
    for split in splits {
        let records = read_blocks(
            cluster,
            plan,
            dataset,
            &split.blocks,
            Some(&projection),
            None,
            stats,
        )?;
        for r in records {
            let k = r.get(key).map_err(LangError::Core)?.canonical();
            let delta = match (agg, agg_attr) {
                (Aggregate::Count, _) => 1,
                (Aggregate::SumInt, Some(attr)) => match r.get(attr).map_err(LangError::Core)? {
                    Value::Int(v) => *v,
                    Value::Float(v) => *v as i64,
                    _ => 0,
                },
                (Aggregate::SumInt, None) => 0,
            };
            *out.entry(k).or_insert(0) += delta;
        }
    }
    Ok(out)
}

/// Per-co-split local hash join: builds a table on the first dataset's
/// side and probes with the second. Runs entirely split-local, so the
/// shuffle counter stays at zero.
pub fn hash_join_cogrouped(
    cluster: &Cluster,
    left: (&IngestPlan, &str, &str),
    right: (&IngestPlan, &str, &str),
    co_splits: &[CoSplit],
    stats: &mut IoStats,
) -> Result<Vec<(Record, Record)>, AccessError> {
    let mut out = Vec::new();
    for split in co_splits {
        let left_rows = read_blocks(
            cluster, left.0, left.1, &split.blocks[0], None, None, stats,
        )?;
        let right_rows = read_blocks(
            cluster, right.0, right.1, &split.blocks[1], None, None, stats,
        )?;
        let mut table: BTreeMap<String, Vec<&Record>> = BTreeMap::new();
        for r in &left_rows {
            table
                .entry(r.get(left.2).map_err(LangError::Core)?.canonical())
                .or_default()
                .push(r);
        }
        for probe in &right_rows {
            let key = probe.get(right.2).map_err(LangError::Core)?.canonical();
            if let Some(matches) = table.get(&key) {
                for l in matches {
                    out.push(((*l).clone(), probe.clone()));
                }
            }
        }
    }
    Ok(out)
}

/// Restores read availability state for CLI status output.
pub fn dataset_summary(cluster: &Cluster, dataset: &str) -> serde_json::Value {
    let files = cluster.list_dataset(dataset);
    let total: u64 = files.iter().map(|f| f.size).sum();
    let physical: u64 = files.iter().map(|f| f.size * f.replicas.len() as u64).sum();
    serde_json::json!({
        "dataset": dataset,
        "files": files.len(),
        "logical_bytes": total,
        "physical_bytes": physical,
    })
}

pub fn node_of(cluster: &Cluster, idx: usize) -> NodeId {
    NodeId(idx.min(cluster.nodes().len().saturating_sub(1)))
}
