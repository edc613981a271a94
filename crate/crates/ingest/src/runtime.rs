//! The runtime engine: ships the optimized plan to every node, runs
//! pipelined blocks over node-local inputs with intra-node parallel mode,
//! shuffles through the shared DFS area, and survives in-flight operator
//! and node failures.
//!
//! Execution proceeds block by block: each pipelined block runs on all
//! nodes (a scoped thread per node), materialized outputs spill to the
//! node-local tmp directory at every surviving marker, and the join between
//! blocks doubles as the barrier for shuffles and failure handling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, ClusterError, NodeId};
use crate::item::{CoreError, IngestItem, ViolationRecord};
use crate::op::{drain_operator, ShuffleMode};
use crate::oplib::{self, DummyPassThrough, ExecCtx, OpClass};
use crate::optimizer::{ExecPlan, NodeKind, PipelinedBlock};
use crate::plan::OpSpec;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("execution failed on node {unit} at operator {op}: {cause}")]
    ExecutionFailed {
        unit: usize,
        op: String,
        cause: String,
    },
    #[error("inputs of node {0} were lost with the node and are not available remotely")]
    InputsLost(usize),
    #[error("shuffle group {0} unreadable after re-copy")]
    ShuffleCorrupt(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("spill codec failure: {0}")]
    Spill(#[from] serde_json::Error),
}

/// An injected operator failure, for fault-tolerance drills.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultSpec {
    pub op: String,
    /// Restrict to one logical node; None hits every node.
    pub unit: Option<usize>,
    /// How many drains of that operator fail before it behaves again.
    pub times: u32,
}

/// Kills a node at a block boundary, mid-run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KillEvent {
    pub node: usize,
    pub before_block: usize,
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub dataset: String,
    pub seed: u64,
    /// Intra-node parallel mode pool; defaults to the core count.
    pub pool_size: usize,
    pub max_retries: u32,
    pub faults: Vec<FaultSpec>,
    pub kills: Vec<KillEvent>,
    /// Corrupt the first N shuffle part files once, to exercise re-copy.
    pub corrupt_shuffle_parts: u32,
    pub run_id: String,
}

impl ExecConfig {
    pub fn new(dataset: &str) -> ExecConfig {
        ExecConfig {
            dataset: dataset.to_string(),
            seed: 0,
            pool_size: std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1),
            max_retries: 3,
            faults: Vec::new(),
            kills: Vec::new(),
            corrupt_shuffle_parts: 0,
            run_id: "run".to_string(),
        }
    }
}

/// Per-node input binding: which raw files a logical node ingests. The
/// file id becomes the source label, so it must be globally unique.
#[derive(Debug, Clone)]
pub struct InputBinding {
    pub unit: usize,
    pub source: String,
    pub files: Vec<(u64, PathBuf)>,
    /// Whether the input survives the node (available remotely).
    pub replicated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpCounter {
    pub unit: usize,
    pub stage: String,
    pub op: String,
    pub items_in: u64,
    pub items_out: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageCounter {
    pub unit: usize,
    pub stage: String,
    pub items_in: u64,
    pub items_out: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryEvent {
    pub unit: usize,
    pub op: String,
    pub attempt: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummyEvent {
    pub unit: usize,
    pub op: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectEntry {
    pub unit: usize,
    pub violation: ViolationRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub size: u64,
    pub digest: String,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescheduleEvent {
    pub unit: usize,
    pub to_node: usize,
    pub at_block: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub dataset: String,
    pub op_counters: Vec<OpCounter>,
    pub stage_counters: Vec<StageCounter>,
    pub shuffle_bytes: u64,
    pub shuffle_repairs: u64,
    pub retries: Vec<RetryEvent>,
    pub dummies: Vec<DummyEvent>,
    pub reschedules: Vec<RescheduleEvent>,
    pub rejects: Vec<RejectEntry>,
    pub dropped_labels: BTreeMap<String, u64>,
    pub manifest: Vec<ManifestEntry>,
    pub wall_ms: u64,
}

impl ExecutionReport {
    /// Order-normalized manifest signature for differential comparisons.
    pub fn manifest_fingerprint(&self) -> String {
        let mut entries: Vec<String> = self
            .manifest
            .iter()
            .map(|m| format!("{}:{}:{}", m.name, m.size, m.digest))
            .collect();
        entries.sort();
        entries.join("\n")
    }
}

/// Runs one operator over a partitioned input with a pool of instances and
/// merges the outputs by input order. Only operators declared parallel-safe
/// may run this way.
pub fn run_parallel_mode(
    spec: &OpSpec,
    ctx: &ExecCtx,
    items: Vec<IngestItem>,
    pool_size: usize,
) -> Result<(Vec<IngestItem>, Vec<ViolationRecord>), CoreError> {
    let sig = oplib::signature(spec)?;
    if !sig.parallel_mode {
        return Err(CoreError::BadParam {
            name: spec.instance.clone(),
            reason: "operator is stateful and cannot run in parallel mode".into(),
        });
    }
    let pool = pool_size.max(1);
    if pool == 1 || items.len() <= 1 {
        let mut op = oplib::instantiate(spec, ctx)?;
        let out = drain_operator(op.as_mut(), items)?;
        let rejects = op.take_rejects();
        return Ok((out, rejects));
    }
    let chunk_size = items.len().div_ceil(pool);
    let chunks: Vec<Vec<IngestItem>> = items
        .chunks(chunk_size)
        .map(|c| c.to_vec())
        .collect();
    let results: Vec<Result<(Vec<IngestItem>, Vec<ViolationRecord>), CoreError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut op = oplib::instantiate(spec, ctx)?;
                        let out = drain_operator(op.as_mut(), chunk)?;
                        let rejects = op.take_rejects();
                        Ok((out, rejects))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
    let mut out = Vec::new();
    let mut rejects = Vec::new();
    for r in results {
        let (o, rj) = r?;
        out.extend(o);
        rejects.extend(rj);
    }
    Ok((out, rejects))
}

/// Runs one operator with the retry-then-dummy policy: up to `max_retries`
/// attempts; once the same operator has failed that many times it is
/// replaced by the dummy pass-through, which labels its outputs "-1".
pub fn retry_or_dummy(
    spec: &OpSpec,
    ctx: &ExecCtx,
    inputs: Vec<IngestItem>,
    max_retries: u32,
    mut inject_failures: u32,
) -> Result<(Vec<IngestItem>, Vec<RetryEvent>, bool), CoreError> {
    let mut retries = Vec::new();
    let mut failures = 0u32;
    loop {
        if failures >= max_retries {
            let mut dummy = DummyPassThrough::replacing(&spec.instance);
            let out = drain_operator(&mut dummy, inputs)?;
            return Ok((out, retries, true));
        }
        if inject_failures > 0 {
            inject_failures -= 1;
            failures += 1;
            retries.push(RetryEvent {
                unit: ctx.unit,
                op: spec.instance.clone(),
                attempt: failures,
            });
            continue;
        }
        let mut op = oplib::instantiate(spec, ctx)?;
        match drain_operator(op.as_mut(), inputs.clone()) {
            Ok(out) => return Ok((out, retries, false)),
            Err(_) => {
                failures += 1;
                retries.push(RetryEvent {
                    unit: ctx.unit,
                    op: spec.instance.clone(),
                    attempt: failures,
                });
            }
        }
    }
}

struct SharedState {
    fault_budget: Mutex<HashMap<(usize, String), u32>>,
    dummies: Mutex<HashSet<(usize, String)>>,
    retries: Mutex<Vec<RetryEvent>>,
    dummy_events: Mutex<Vec<DummyEvent>>,
    rejects: Mutex<Vec<RejectEntry>>,
    counters: Mutex<Vec<OpCounter>>,
    stage_wall: Mutex<BTreeMap<(usize, String), u64>>,
    shuffle_bytes: AtomicU64,
    shuffle_repairs: AtomicU64,
    corrupt_budget: AtomicU64,
}

struct Engine<'a> {
    exec: &'a ExecPlan,
    cluster: Arc<Cluster>,
    cfg: &'a ExecConfig,
    bindings: Vec<InputBinding>,
    units: Vec<usize>,
    /// Logical unit -> physical node executing it.
    assignment: Mutex<Vec<usize>>,
    ctxs: Vec<ExecCtx>,
    state: SharedState,
}

fn items_to_jsonl(items: &[IngestItem]) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn items_from_jsonl(bytes: &[u8]) -> Result<Vec<IngestItem>, serde_json::Error> {
    let mut items = Vec::new();
    for line in bytes.split(|&b| b == b'\n') {
        if line.is_empty() {
            continue;
        }
        items.push(serde_json::from_slice(line)?);
    }
    Ok(items)
}

impl<'a> Engine<'a> {
    fn spill_path(&self, unit: usize, marker: usize) -> PathBuf {
        // Keyed by logical unit so a rescheduled unit's checkpoints never
        // collide with its host node's own.
        let node = NodeId(self.assignment.lock().unwrap()[unit]);
        self.cluster
            .node_tmp_dir(node)
            .join(format!("run-{}", self.cfg.run_id))
            .join(format!("u{unit}-m{marker}.jsonl"))
    }

    fn write_spill(&self, unit: usize, marker: usize, items: &[IngestItem]) -> Result<(), RuntimeError> {
        let path = self.spill_path(unit, marker);
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(&path, items_to_jsonl(items)?)?;
        Ok(())
    }

    fn read_spill(&self, unit: usize, marker: usize) -> Result<Vec<IngestItem>, RuntimeError> {
        let path = self.spill_path(unit, marker);
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(items_from_jsonl(&std::fs::read(&path)?)?)
    }

    fn source_items(&self, unit: usize, source: &str) -> Result<Vec<IngestItem>, RuntimeError> {
        let mut items = Vec::new();
        for binding in &self.bindings {
            if binding.unit != unit || binding.source != source {
                continue;
            }
            for (file_id, path) in &binding.files {
                let bytes = std::fs::read(path)?;
                items.push(IngestItem::file(bytes).with_label(source, file_id.to_string())?);
            }
        }
        Ok(items)
    }

    /// Drains one operator with fault injection, dummy substitution and
    /// parallel mode.
    fn drain_op(
        &self,
        unit: usize,
        spec: &OpSpec,
        items: Vec<IngestItem>,
    ) -> Result<(Vec<IngestItem>, Vec<ViolationRecord>), CoreError> {
        let key = (unit, spec.instance.clone());
        if self.state.dummies.lock().unwrap().contains(&key) {
            let mut dummy = DummyPassThrough::replacing(&spec.instance);
            let out = drain_operator(&mut dummy, items)?;
            return Ok((out, Vec::new()));
        }
        {
            let mut budget = self.state.fault_budget.lock().unwrap();
            if let Some(remaining) = budget.get_mut(&key) {
                if *remaining > 0 {
                    *remaining -= 1;
                    return Err(CoreError::OperatorFailure {
                        op: spec.instance.clone(),
                        reason: "injected fault".into(),
                    });
                }
            }
        }
        let sig = oplib::signature(spec)?;
        let ctx = &self.ctxs[unit];
        if sig.parallel_mode && self.cfg.pool_size > 1 {
            run_parallel_mode(spec, ctx, items, self.cfg.pool_size)
        } else {
            let mut op = oplib::instantiate(spec, ctx)?;
            let out = drain_operator(op.as_mut(), items)?;
            let rejects = op.take_rejects();
            Ok((out, rejects))
        }
    }

    /// Runs one pipelined block for one logical unit, retrying from the
    /// block's checkpoints on operator failure and substituting the dummy
    /// pass-through after repeated failures of the same operator.
    fn run_block(
        &self,
        unit: usize,
        block: &PipelinedBlock,
        overrides: &HashMap<usize, Vec<IngestItem>>,
    ) -> Result<(), RuntimeError> {
        let graph = &self.exec.graph;
        let started = Instant::now();
        let mut attempts_left =
            (self.cfg.max_retries as usize + 1) * (block.nodes.len() + 1);
        'attempt: loop {
            let mut temp: HashMap<usize, Vec<IngestItem>> = HashMap::new();
            let mut attempt_counters: Vec<OpCounter> = Vec::new();
            let mut attempt_rejects: Vec<RejectEntry> = Vec::new();
            for &id in &block.nodes {
                let node = &graph.nodes[id];
                let gather = |temp: &HashMap<usize, Vec<IngestItem>>| -> Result<Vec<IngestItem>, RuntimeError> {
                    let mut items = Vec::new();
                    for &input in &node.inputs {
                        match &graph.nodes[input].kind {
                            NodeKind::Marker => {
                                if let Some(over) = overrides.get(&input) {
                                    items.extend(over.clone());
                                } else {
                                    items.extend(self.read_spill(unit, input)?);
                                }
                            }
                            NodeKind::Removed => {}
                            _ => items.extend(temp.get(&input).cloned().unwrap_or_default()),
                        }
                    }
                    Ok(items)
                };
                match &node.kind {
                    NodeKind::Source(s) => {
                        let items = self.source_items(unit, s)?;
                        temp.insert(id, items);
                    }
                    NodeKind::Entry(stage_name) => {
                        let items = gather(&temp)?;
                        let stage = self.exec.plan.stage(stage_name).unwrap();
                        let filtered: Vec<IngestItem> = items
                            .into_iter()
                            .filter(|item| stage.predicates.iter().all(|p| p.matches(item)))
                            .collect();
                        temp.insert(id, filtered);
                    }
                    NodeKind::Op(op_name) => {
                        let spec = self.exec.plan.op(op_name).unwrap().clone();
                        let items = gather(&temp)?;
                        let items_in = items.len() as u64;
                        match self.drain_op(unit, &spec, items) {
                            Ok((out, rejects)) => {
                                attempt_counters.push(OpCounter {
                                    unit,
                                    stage: self
                                        .exec
                                        .plan
                                        .stage_of_op(op_name)
                                        .map(|s| s.name.clone())
                                        .unwrap_or_default(),
                                    op: op_name.clone(),
                                    items_in,
                                    items_out: out.len() as u64,
                                });
                                attempt_rejects.extend(rejects.into_iter().map(|violation| {
                                    RejectEntry { unit, violation }
                                }));
                                temp.insert(id, out);
                            }
                            Err(err) => {
                                // Count the failure; replace with the dummy
                                // pass-through after max_retries failures of
                                // the same operator, then re-run the block
                                // from its checkpoint.
                                attempts_left = attempts_left.saturating_sub(1);
                                if attempts_left == 0 {
                                    return Err(RuntimeError::ExecutionFailed {
                                        unit,
                                        op: op_name.clone(),
                                        cause: err.to_string(),
                                    });
                                }
                                let key = (unit, op_name.clone());
                                let attempt = {
                                    let mut retries = self.state.retries.lock().unwrap();
                                    let attempt = retries
                                        .iter()
                                        .filter(|r| r.unit == unit && &r.op == op_name)
                                        .count() as u32
                                        + 1;
                                    retries.push(RetryEvent {
                                        unit,
                                        op: op_name.clone(),
                                        attempt,
                                    });
                                    attempt
                                };
                                if attempt >= self.cfg.max_retries {
                                    self.state.dummies.lock().unwrap().insert(key);
                                    self.state
                                        .dummy_events
                                        .lock()
                                        .unwrap()
                                        .push(DummyEvent {
                                            unit,
                                            op: op_name.clone(),
                                        });
                                }
                                continue 'attempt;
                            }
                        }
                    }
                    NodeKind::Marker | NodeKind::Removed => {}
                }
            }
            // Success: spill every marker fed by this block.
            for (m_id, m_node) in graph.nodes.iter().enumerate() {
                if m_node.kind != NodeKind::Marker {
                    continue;
                }
                let Some(&producer) = m_node.inputs.first() else {
                    continue;
                };
                if let Some(items) = temp.get(&producer) {
                    if block.nodes.contains(&producer) {
                        self.write_spill(unit, m_id, items)?;
                    }
                }
            }
            self.state.counters.lock().unwrap().extend(attempt_counters);
            self.state.rejects.lock().unwrap().extend(attempt_rejects);
            // Stage wall time at block granularity, attributed to the
            // stages the block touches.
            let elapsed = started.elapsed().as_millis() as u64;
            let mut wall = self.state.stage_wall.lock().unwrap();
            for &id in &block.nodes {
                if let NodeKind::Op(op) = &graph.nodes[id].kind {
                    if let Some(stage) = self.exec.plan.stage_of_op(op) {
                        *wall.entry((unit, stage.name.clone())).or_insert(0) += elapsed;
                    }
                }
            }
            return Ok(());
        }
    }

    /// The shuffle-by-label operator starting this block, if any:
    /// (op node, shuffle mode, input marker). The marker may sit behind a
    /// stage entry; predicates still apply after the shuffle.
    fn block_shuffle(&self, block: &PipelinedBlock) -> Option<(usize, ShuffleMode, usize)> {
        for &id in &block.nodes {
            if let NodeKind::Op(name) = &self.exec.graph.nodes[id].kind {
                let sig = oplib::signature(self.exec.plan.op(name)?).ok()?;
                if sig.shuffle != ShuffleMode::None {
                    let mut input = *self.exec.graph.nodes[id].inputs.first()?;
                    loop {
                        match &self.exec.graph.nodes[input].kind {
                            NodeKind::Marker => return Some((id, sig.shuffle, input)),
                            NodeKind::Entry(_) => {
                                input = *self.exec.graph.nodes[input].inputs.first()?;
                            }
                            _ => break,
                        }
                    }
                }
            }
        }
        None
    }

    fn shuffle_dir(&self, block_idx: usize) -> PathBuf {
        self.cluster
            .dfs_dir()
            .join(format!("shuffle-{}-{block_idx}", self.cfg.run_id))
    }

    fn group_of(&self, mode: &ShuffleMode, item: &IngestItem) -> Result<String, RuntimeError> {
        match mode {
            ShuffleMode::Gather => Ok("0".to_string()),
            ShuffleMode::ByLabel(op) => item
                .label(op)
                .map(str::to_string)
                .ok_or_else(|| CoreError::MissingLabel(op.clone()).into()),
            ShuffleMode::None => Ok("0".to_string()),
        }
    }

    /// Writes one unit's contribution to the shuffle directories.
    fn shuffle_write(
        &self,
        unit: usize,
        block_idx: usize,
        mode: &ShuffleMode,
        marker: usize,
    ) -> Result<(), RuntimeError> {
        let items = self.read_spill(unit, marker)?;
        let mut groups: BTreeMap<String, Vec<IngestItem>> = BTreeMap::new();
        for item in items {
            groups.entry(self.group_of(mode, &item)?).or_default().push(item);
        }
        for (gid, members) in groups {
            let dir = self.shuffle_dir(block_idx).join(format!("group-{gid}"));
            std::fs::create_dir_all(&dir)?;
            let mut bytes = items_to_jsonl(&members)?;
            self.state
                .shuffle_bytes
                .fetch_add(bytes.len() as u64, Ordering::Relaxed);
            // Optional corruption drill: damage the first N parts written.
            if self.state.corrupt_budget.load(Ordering::Relaxed) > 0
                && self
                    .state
                    .corrupt_budget
                    .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |v| v.checked_sub(1))
                    .is_ok()
            {
                bytes.truncate(bytes.len() / 2);
            }
            std::fs::write(dir.join(format!("part-{unit:05}.jsonl")), bytes)?;
        }
        Ok(())
    }

    /// Reads the groups this unit owns, re-copying corrupt parts from the
    /// producing unit's local spill.
    fn shuffle_read(
        &self,
        unit: usize,
        block_idx: usize,
        mode: &ShuffleMode,
        marker: usize,
    ) -> Result<Vec<IngestItem>, RuntimeError> {
        let base = self.shuffle_dir(block_idx);
        let mut group_ids: Vec<String> = Vec::new();
        if base.exists() {
            for entry in std::fs::read_dir(&base)? {
                let name = entry?.file_name().to_string_lossy().to_string();
                if let Some(gid) = name.strip_prefix("group-") {
                    group_ids.push(gid.to_string());
                }
            }
        }
        group_ids.sort_by(|a, b| {
            let (pa, pb) = (a.parse::<u64>(), b.parse::<u64>());
            match (pa, pb) {
                (Ok(x), Ok(y)) => x.cmp(&y),
                _ => a.cmp(b),
            }
        });
        let owner_of = |gid: &str| -> usize {
            let idx = gid
                .parse::<u64>()
                .unwrap_or_else(|_| crate::item::fnv64(gid.as_bytes()));
            self.units[(idx % self.units.len() as u64) as usize]
        };
        let mut gathered = Vec::new();
        for gid in group_ids {
            if owner_of(&gid) != unit {
                continue;
            }
            let dir = base.join(format!("group-{gid}"));
            let mut parts: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            parts.sort();
            for part in parts {
                let bytes = std::fs::read(&part)?;
                match items_from_jsonl(&bytes) {
                    Ok(items) => gathered.extend(items),
                    Err(_) => {
                        // Corrupt group part: copy it again from the
                        // producer's local groups.
                        self.state.shuffle_repairs.fetch_add(1, Ordering::Relaxed);
                        let producer: usize = part
                            .file_name()
                            .and_then(|n| n.to_str())
                            .and_then(|n| n.strip_prefix("part-"))
                            .and_then(|n| n.strip_suffix(".jsonl"))
                            .and_then(|n| n.parse().ok())
                            .ok_or_else(|| RuntimeError::ShuffleCorrupt(gid.clone()))?;
                        let source = self.read_spill(producer, marker)?;
                        let members: Vec<IngestItem> = source
                            .into_iter()
                            .filter(|item| {
                                self.group_of(mode, item)
                                    .map(|g| g == gid)
                                    .unwrap_or(false)
                            })
                            .collect();
                        let fixed = items_to_jsonl(&members)?;
                        std::fs::write(&part, &fixed)?;
                        gathered.extend(
                            items_from_jsonl(&std::fs::read(&part)?)
                                .map_err(|_| RuntimeError::ShuffleCorrupt(gid.clone()))?,
                        );
                    }
                }
            }
        }
        Ok(gathered)
    }

    /// Handles a node death: reassigns the logical unit to the next alive
    /// node and re-runs all earlier blocks for it from its raw inputs.
    fn reschedule(&self, unit: usize, up_to_block: usize) -> Result<RescheduleEvent, RuntimeError> {
        let replicated = self
            .bindings
            .iter()
            .filter(|b| b.unit == unit)
            .all(|b| b.replicated);
        let has_inputs = self.bindings.iter().any(|b| b.unit == unit);
        if has_inputs && !replicated {
            return Err(RuntimeError::InputsLost(unit));
        }
        let alive = self.cluster.alive_nodes();
        let target = alive
            .iter()
            .map(|n| n.0)
            .find(|&n| n > unit)
            .or_else(|| alive.first().map(|n| n.0))
            .ok_or_else(|| ClusterError::ClusterUnavailable("no alive nodes".into()))?;
        self.assignment.lock().unwrap()[unit] = target;
        for (idx, block) in self.exec.blocks.iter().enumerate().take(up_to_block) {
            let overrides = if let Some((_, mode, marker)) = self.block_shuffle(block) {
                self.shuffle_write(unit, idx, &mode, marker)?;
                let gathered = self.shuffle_read(unit, idx, &mode, marker)?;
                HashMap::from([(marker, gathered)])
            } else {
                HashMap::new()
            };
            self.run_block(unit, block, &overrides)?;
        }
        Ok(RescheduleEvent {
            unit,
            to_node: target,
            at_block: up_to_block,
        })
    }
}

/// Executes an optimized plan over per-node inputs. Every node runs the
/// identical plan on its local files; the run completes only when all
/// nodes finish.
pub fn execute_plan(
    exec: &ExecPlan,
    bindings: &[InputBinding],
    cluster: Arc<Cluster>,
    cfg: &ExecConfig,
) -> Result<ExecutionReport, RuntimeError> {
    let started = Instant::now();
    let plan = &exec.plan;

    // Static operator sets shared by all operator instances.
    let mut per_item = HashSet::new();
    let mut replicate = HashSet::new();
    let mut locate = HashSet::new();
    let mut serialize = HashSet::new();
    for (name, spec) in &plan.ops {
        let sig = oplib::signature(spec)?;
        if sig.per_item_label {
            per_item.insert(name.clone());
        }
        match oplib::classify(spec) {
            OpClass::Replicate | OpClass::Stochastic => {
                replicate.insert(name.clone());
            }
            OpClass::Locate => {
                locate.insert(name.clone());
            }
            OpClass::Serialize => {
                serialize.insert(name.clone());
            }
            _ => {}
        }
    }
    let per_item = Arc::new(per_item);
    let replicate = Arc::new(replicate);
    let locate = Arc::new(locate);
    let serialize = Arc::new(serialize);
    let manifest = Arc::new(Mutex::new(Vec::new()));
    let dropped = Arc::new(Mutex::new(BTreeMap::new()));

    let units: Vec<usize> = cluster.nodes().iter().map(|n| n.0).collect();
    let ctxs: Vec<ExecCtx> = units
        .iter()
        .map(|&unit| ExecCtx {
            seed: cfg.seed,
            unit,
            dataset: cfg.dataset.clone(),
            cluster: Some(cluster.clone()),
            slots: Arc::new(plan.slots.clone()),
            per_item_ops: per_item.clone(),
            replicate_ops: replicate.clone(),
            locate_ops: locate.clone(),
            serialize_ops: serialize.clone(),
            manifest: manifest.clone(),
            dropped_labels: dropped.clone(),
        })
        .collect();

    let mut fault_budget = HashMap::new();
    for f in &cfg.faults {
        match f.unit {
            Some(u) => {
                fault_budget.insert((u, f.op.clone()), f.times);
            }
            None => {
                for &u in &units {
                    fault_budget.insert((u, f.op.clone()), f.times);
                }
            }
        }
    }

    let engine = Engine {
        exec,
        cluster: cluster.clone(),
        cfg,
        bindings: bindings.to_vec(),
        units: units.clone(),
        assignment: Mutex::new(units.clone()),
        ctxs,
        state: SharedState {
            fault_budget: Mutex::new(fault_budget),
            dummies: Mutex::new(HashSet::new()),
            retries: Mutex::new(Vec::new()),
            dummy_events: Mutex::new(Vec::new()),
            rejects: Mutex::new(Vec::new()),
            counters: Mutex::new(Vec::new()),
            stage_wall: Mutex::new(BTreeMap::new()),
            shuffle_bytes: AtomicU64::new(0),
            shuffle_repairs: AtomicU64::new(0),
            corrupt_budget: AtomicU64::new(cfg.corrupt_shuffle_parts as u64),
        },
    };

    // Fresh spill area per unit.
    for &unit in &units {
        let dir = cluster
            .node_tmp_dir(NodeId(unit))
            .join(format!("run-{}", cfg.run_id));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
    }

    let mut reschedules = Vec::new();
    let mut dead: HashSet<usize> = units
        .iter()
        .copied()
        .filter(|&u| !cluster.is_alive(NodeId(u)))
        .collect();

    for (block_idx, block) in exec.blocks.iter().enumerate() {
        // Node deaths scheduled at this boundary.
        for kill in cfg.kills.iter().filter(|k| k.before_block == block_idx) {
            if cluster.is_alive(NodeId(kill.node)) {
                cluster.kill_node(NodeId(kill.node))?;
            }
            if !dead.contains(&kill.node) {
                dead.insert(kill.node);
                reschedules.push(engine.reschedule(kill.node, block_idx)?);
            }
        }

        // Shuffle prologue: all units write their groups, then owners read.
        let shuffle = engine.block_shuffle(block);
        let mut overrides_per_unit: HashMap<usize, HashMap<usize, Vec<IngestItem>>> =
            HashMap::new();
        if let Some((_, mode, marker)) = &shuffle {
            let write_results: Vec<Result<(), RuntimeError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = units
                    .iter()
                    .map(|&unit| {
                        let engine = &engine;
                        let mode = mode.clone();
                        scope.spawn(move || engine.shuffle_write(unit, block_idx, &mode, *marker))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for r in write_results {
                r?;
            }
            for &unit in &units {
                let gathered = engine.shuffle_read(unit, block_idx, mode, *marker)?;
                overrides_per_unit.insert(unit, HashMap::from([(*marker, gathered)]));
            }
        }

        let results: Vec<Result<(), RuntimeError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = units
                .iter()
                .map(|&unit| {
                    let engine = &engine;
                    let overrides = overrides_per_unit.remove(&unit).unwrap_or_default();
                    scope.spawn(move || engine.run_block(unit, block, &overrides))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            r?;
        }
    }
    // Kills scheduled after the last block have no effect on the run.
    for kill in cfg.kills.iter().filter(|k| k.before_block >= exec.blocks.len()) {
        if cluster.is_alive(NodeId(kill.node)) {
            cluster.kill_node(NodeId(kill.node))?;
        }
    }

    // Assemble the report.
    let mut op_counters = engine.state.counters.into_inner().unwrap();
    op_counters.sort_by(|a, b| (a.unit, &a.op).cmp(&(b.unit, &b.op)));
    let stage_wall = engine.state.stage_wall.into_inner().unwrap();
    let mut stage_counters = Vec::new();
    for stage in &plan.stages {
        for &unit in &units {
            let f = |op: &String| {
                op_counters
                    .iter()
                    .filter(|c| c.unit == unit && &c.op == op)
                    .map(|c| (c.items_in, c.items_out))
                    .fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1))
            };
            let items_in = stage.chain.first().map(f).map(|v| v.0).unwrap_or(0);
            let items_out = stage.chain.last().map(f).map(|v| v.1).unwrap_or(0);
            stage_counters.push(StageCounter {
                unit,
                stage: stage.name.clone(),
                items_in,
                items_out,
                wall_ms: stage_wall
                    .get(&(unit, stage.name.clone()))
                    .copied()
                    .unwrap_or(0),
            });
        }
    }
    let mut manifest: Vec<ManifestEntry> = manifest
        .lock()
        .unwrap()
        .iter()
        .map(|f| ManifestEntry {
            name: f.name.clone(),
            size: f.size,
            digest: format!("{:016x}", f.digest),
            replicas: f.replicas.len(),
        })
        .collect();
    manifest.sort_by(|a, b| a.name.cmp(&b.name));
    manifest.dedup_by(|a, b| a.name == b.name && a.digest == b.digest);

    Ok(ExecutionReport {
        dataset: cfg.dataset.clone(),
        op_counters,
        stage_counters,
        shuffle_bytes: engine.state.shuffle_bytes.load(Ordering::Relaxed),
        shuffle_repairs: engine.state.shuffle_repairs.load(Ordering::Relaxed),
        retries: engine.state.retries.into_inner().unwrap(),
        dummies: engine.state.dummy_events.into_inner().unwrap(),
        reschedules,
        rejects: engine.state.rejects.into_inner().unwrap(),
        dropped_labels: Arc::try_unwrap(dropped)
            .map(|m| m.into_inner().unwrap())
            .unwrap_or_default(),
        manifest,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}
