//! Rule-based plan rewriting: the compiled stage DAG becomes an operator
//! expression graph with a materialize marker after every operator, rules
//! are matched in preorder (larger subtrees first) and applied until none
//! fire, and the surviving markers cut the graph into pipelined blocks.

use std::collections::HashMap;

use thiserror::Error;

use crate::item::{CoreError, IngestItem, Record};
use crate::op::{drain_operator, GranIn, GranOut, OpSignature, ShuffleMode};
use crate::oplib::{self, ExecCtx, OpClass};
use crate::plan::IngestPlan;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("rewrite budget of {0} exceeded; a rule is not converging")]
    BudgetExceeded(usize),
    #[error("invalid rewrite by rule {rule}: {reason}")]
    InvalidRewrite { rule: String, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Raw input binding.
    Source(String),
    /// Stage entry: applies the stage's label predicates; a union when it
    /// has more than one input.
    Entry(String),
    /// An operator instance.
    Op(String),
    /// Materialization marker (checkpoint boundary).
    Marker,
    /// Spliced out by the pipelining rule.
    Removed,
}

#[derive(Debug, Clone)]
pub struct ExprNode {
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
}

/// Operator expression DAG. Children are inputs; roots are the nodes no one
/// consumes (plan outputs).
#[derive(Debug, Clone, Default)]
pub struct ExprGraph {
    pub nodes: Vec<ExprNode>,
}

impl ExprGraph {
    fn push(&mut self, kind: NodeKind, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(ExprNode { kind, inputs });
        self.nodes.len() - 1
    }

    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind != NodeKind::Removed && n.inputs.contains(&id))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn roots(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| {
                self.nodes[i].kind != NodeKind::Removed && self.consumers(i).is_empty()
            })
            .collect()
    }

    /// Topological order (inputs before consumers), deterministic.
    pub fn topo(&self) -> Vec<NodeId> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for node in &self.nodes {
            if node.kind == NodeKind::Removed {
                continue;
            }
            let _ = node.inputs.iter().map(|_| ()).count();
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.kind == NodeKind::Removed {
                continue;
            }
            indegree[i] = node.inputs.len();
        }
        let mut ready: Vec<NodeId> = (0..n)
            .filter(|&i| self.nodes[i].kind != NodeKind::Removed && indegree[i] == 0)
            .collect();
        let mut order = Vec::new();
        while let Some(&next) = ready.first() {
            ready.remove(0);
            order.push(next);
            for c in self.consumers(next) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    let pos = ready.partition_point(|&r| r < c);
                    ready.insert(pos, c);
                }
            }
        }
        order
    }

    fn describe(&self, id: NodeId) -> String {
        match &self.nodes[id].kind {
            NodeKind::Source(s) => format!("source {s}"),
            NodeKind::Entry(s) => format!("stage {s}"),
            NodeKind::Op(o) => o.clone(),
            NodeKind::Marker => format!("marker #{id}"),
            NodeKind::Removed => format!("removed #{id}"),
        }
    }
}

/// Builds the marker-laden expression graph for a plan: one entry node per
/// stage, chain operators separated by markers, and a shared marker after
/// every stage tail feeding downstream entries.
pub fn build_expr_graph(plan: &IngestPlan) -> ExprGraph {
    let mut g = ExprGraph::default();
    let mut source_nodes: HashMap<String, NodeId> = HashMap::new();
    for s in &plan.sources {
        let id = g.push(NodeKind::Source(s.clone()), Vec::new());
        source_nodes.insert(s.clone(), id);
    }
    let mut tails: HashMap<String, NodeId> = HashMap::new();
    let mut tail_markers: HashMap<NodeId, NodeId> = HashMap::new();
    for stage in &plan.stages {
        let entry_inputs: Vec<NodeId> = if stage.is_source() {
            stage_sources(plan, &stage.name)
                .into_iter()
                .filter_map(|s| source_nodes.get(&s).copied())
                .collect()
        } else {
            let upstream_tails: Vec<NodeId> =
                stage.upstreams.iter().map(|u| tails[u]).collect();
            upstream_tails
                .into_iter()
                .map(|t| {
                    *tail_markers
                        .entry(t)
                        .or_insert_with(|| g.push(NodeKind::Marker, vec![t]))
                })
                .collect()
        };
        let entry = g.push(NodeKind::Entry(stage.name.clone()), entry_inputs);
        let mut prev = entry;
        for (idx, op) in stage.chain.iter().enumerate() {
            if idx > 0 {
                prev = g.push(NodeKind::Marker, vec![prev]);
            }
            prev = g.push(NodeKind::Op(op.clone()), vec![prev]);
        }
        tails.insert(stage.name.clone(), prev);
    }
    g
}

/// Source bindings a source stage reads, via its statements' FROM clauses.
fn stage_sources(plan: &IngestPlan, stage: &str) -> Vec<String> {
    use crate::lang::ast::Statement;
    let stage = plan.stage(stage).unwrap();
    let mut out = Vec::new();
    for stmt_name in &stage.statements {
        if let Some(a) = plan.program.assignments.iter().find(|a| &a.name == stmt_name) {
            let inputs: Vec<&str> = match &a.stmt {
                Statement::Select(s) => vec![s.from.as_str()],
                Statement::Format(f) => f.inputs.iter().map(String::as_str).collect(),
                Statement::Store(s) => s.inputs.iter().map(String::as_str).collect(),
            };
            for i in inputs {
                if plan.sources.iter().any(|s| s == i) && !out.iter().any(|s| s == i) {
                    out.push(i.to_string());
                }
            }
        }
    }
    out
}

/// A maximal marker-free operator run; the unit of pipelining, retry and
/// checkpointing.
#[derive(Debug, Clone)]
pub struct PipelinedBlock {
    /// Non-marker nodes in topological order.
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RuleFiring {
    pub rule: String,
    pub subtree: String,
    pub iteration: usize,
}

/// An optimized, executable plan.
pub struct ExecPlan {
    pub plan: IngestPlan,
    pub graph: ExprGraph,
    pub blocks: Vec<PipelinedBlock>,
    pub trace: Vec<RuleFiring>,
}

pub struct OptimizeCtx {
    /// Sample records for reduction estimates; rules needing a probe do not
    /// fire without one.
    pub probe: Option<Vec<Record>>,
    /// Rewrite budget; defaults to 10x the operator count.
    pub budget: Option<usize>,
}

impl Default for OptimizeCtx {
    fn default() -> Self {
        OptimizeCtx {
            probe: None,
            budget: None,
        }
    }
}

pub trait RewriteRule: Sync {
    fn name(&self) -> &str;
    fn check(&self, g: &ExprGraph, plan: &IngestPlan, node: NodeId, ctx: &OptimizeCtx) -> bool;
    /// Only called when `check` returned true; returns a description of the
    /// rewritten subtree for the trace.
    fn apply(
        &self,
        g: &mut ExprGraph,
        plan: &IngestPlan,
        node: NodeId,
        ctx: &OptimizeCtx,
    ) -> Result<String, OptimizerError>;
}

fn signature_of(plan: &IngestPlan, instance: &str) -> Option<OpSignature> {
    plan.op(instance).and_then(|spec| oplib::signature(spec).ok())
}

/// Granularity-preserving under the pipelining equivalence (a serialized
/// block is still a block).
fn preserves_granularity(sig: &OpSignature) -> bool {
    let out = match sig.output {
        GranOut::SameAsInput => return true,
        GranOut::Fixed(g) => g,
    };
    let in_class = match &sig.input {
        GranIn::Fixed(g) => Some(g.pipeline_class()),
        GranIn::OneOf(set) => {
            let classes: Vec<u8> = set.iter().map(|g| g.pipeline_class()).collect();
            classes.windows(2).all(|w| w[0] == w[1]).then(|| classes[0])
        }
        GranIn::Any => None,
    };
    in_class == Some(out.pipeline_class())
}

/// Can the data stream through this operator without materializing first?
fn streamable(sig: &OpSignature) -> bool {
    !sig.blocking && sig.shuffle == ShuffleMode::None && preserves_granularity(sig)
}

/// The producer an operator reads from, looking through one marker.
fn producer_through_marker(g: &ExprGraph, id: NodeId) -> Option<(NodeId, Option<NodeId>)> {
    let input = *g.nodes[id].inputs.first()?;
    match g.nodes[input].kind {
        NodeKind::Marker => {
            let p = *g.nodes[input].inputs.first()?;
            Some((p, Some(input)))
        }
        _ => Some((input, None)),
    }
}

/// Swaps an operator with its direct producer (both in one stage chain):
/// W -> [M0] -> R -> M1 -> X -> C...  becomes  W -> [M0] -> X -> M1 -> R -> C...
fn swap_with_producer(g: &mut ExprGraph, x: NodeId, r: NodeId, m1: Option<NodeId>) {
    let consumers_of_x: Vec<NodeId> = g.consumers(x);
    let r_inputs = g.nodes[r].inputs.clone();
    for c in consumers_of_x {
        for input in &mut g.nodes[c].inputs {
            if *input == x {
                *input = r;
            }
        }
    }
    g.nodes[x].inputs = r_inputs;
    match m1 {
        Some(m) => {
            g.nodes[m].inputs = vec![x];
            g.nodes[r].inputs = vec![m];
        }
        None => {
            g.nodes[r].inputs = vec![x];
        }
    }
}

/// Pushes replicate operators to the latest legal position in their stage,
/// so the copies are made as late as possible (data-expanding operators run
/// last). One application moves the replicate past one downstream operator.
pub struct ReplicatePushdown;

impl RewriteRule for ReplicatePushdown {
    fn name(&self) -> &str {
        "replicate-pushdown"
    }

    fn check(&self, g: &ExprGraph, plan: &IngestPlan, node: NodeId, _ctx: &OptimizeCtx) -> bool {
        // Pattern: node X consumes a replicate R in the same stage, and X is
        // a deterministic per-item or grouping operator that commutes with
        // copying.
        let NodeKind::Op(x_name) = &g.nodes[node].kind else {
            return false;
        };
        let Some((producer, _)) = producer_through_marker(g, node) else {
            return false;
        };
        let NodeKind::Op(r_name) = &g.nodes[producer].kind else {
            return false;
        };
        let (Some(x_spec), Some(r_spec)) = (plan.op(x_name), plan.op(r_name)) else {
            return false;
        };
        if oplib::classify(r_spec) != OpClass::Replicate {
            return false;
        }
        // Same data flow stage only.
        let same_stage = plan
            .stage_of_op(x_name)
            .zip(plan.stage_of_op(r_name))
            .map(|(a, b)| a.name == b.name)
            .unwrap_or(false);
        if !same_stage {
            return false;
        }
        // The replicate must feed only this operator.
        let r_consumers = g.consumers(producer);
        if r_consumers.len() != 1 {
            return false;
        }
        matches!(
            oplib::classify(x_spec),
            OpClass::Filter
                | OpClass::Project
                | OpClass::Partition
                | OpClass::Chunk
                | OpClass::Order
                | OpClass::Serialize
                | OpClass::Check
                | OpClass::Repair
                | OpClass::Identity
        )
    }

    fn apply(
        &self,
        g: &mut ExprGraph,
        _plan: &IngestPlan,
        node: NodeId,
        _ctx: &OptimizeCtx,
    ) -> Result<String, OptimizerError> {
        let (producer, marker) = producer_through_marker(g, node).ok_or_else(|| {
            OptimizerError::InvalidRewrite {
                rule: self.name().into(),
                reason: "producer vanished between check and apply".into(),
            }
        })?;
        let desc = format!(
            "{} past {}",
            g.describe(producer),
            g.describe(node)
        );
        swap_with_producer(g, node, producer, marker);
        Ok(desc)
    }
}

/// Swaps adjacent filter/projection so the operator shedding more bytes
/// runs first. The estimate runs both operators over the first 1000 probe
/// records; without a probe the rule never fires. Ties keep program order.
pub struct FilterProjectSwap;

impl FilterProjectSwap {
    /// Output bytes after running one operator over the probe.
    fn probe_bytes(plan: &IngestPlan, instance: &str, probe: &[Record]) -> Option<usize> {
        let spec = plan.op(instance)?;
        let ctx = ExecCtx::for_tests(0);
        let mut op = oplib::instantiate(spec, &ctx).ok()?;
        let items: Vec<IngestItem> = probe
            .iter()
            .take(1000)
            .map(|r| IngestItem::record(r.clone()))
            .collect();
        let out = drain_operator(op.as_mut(), items).ok()?;
        Some(
            out.iter()
                .map(|i| match i.payload() {
                    crate::item::Payload::Record(r) => r.encoded_size(),
                    _ => 0,
                })
                .sum(),
        )
    }

    fn candidates(
        g: &ExprGraph,
        plan: &IngestPlan,
        node: NodeId,
    ) -> Option<(String, String, NodeId, Option<NodeId>)> {
        let NodeKind::Op(x_name) = &g.nodes[node].kind else {
            return None;
        };
        let (producer, marker) = producer_through_marker(g, node)?;
        let NodeKind::Op(r_name) = &g.nodes[producer].kind else {
            return None;
        };
        let x_class = oplib::classify(plan.op(x_name)?);
        let r_class = oplib::classify(plan.op(r_name)?);
        let pair_ok = matches!(
            (r_class, x_class),
            (OpClass::Filter, OpClass::Project) | (OpClass::Project, OpClass::Filter)
        );
        if !pair_ok {
            return None;
        }
        let same_stage = plan
            .stage_of_op(x_name)
            .zip(plan.stage_of_op(r_name))
            .map(|(a, b)| a.name == b.name)
            .unwrap_or(false);
        if !same_stage || g.consumers(producer).len() != 1 {
            return None;
        }
        Some((r_name.clone(), x_name.clone(), producer, marker))
    }
}

impl RewriteRule for FilterProjectSwap {
    fn name(&self) -> &str {
        "filter-project-swap"
    }

    fn check(&self, g: &ExprGraph, plan: &IngestPlan, node: NodeId, ctx: &OptimizeCtx) -> bool {
        let Some(probe) = &ctx.probe else {
            return false;
        };
        let Some((first, second, _, _)) = Self::candidates(g, plan, node) else {
            return false;
        };
        // Swapping puts `second` first; legal only when the filter still
        // sees every attribute it reads (projection may have dropped some).
        let first_spec = plan.op(&first).unwrap();
        let second_spec = plan.op(&second).unwrap();
        if oplib::classify(second_spec) == OpClass::Filter {
            let filter_attrs = oplib::signature(second_spec)
                .map(|s| s.requires_attrs)
                .unwrap_or_default();
            let kept = first_spec
                .str("attrs")
                .map(|a| a.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
                .unwrap_or_default();
            if !filter_attrs.iter().all(|a| kept.contains(a)) {
                // Current order is project-then-filter on a dropped attr;
                // cannot happen in a valid plan, and cannot swap either.
                return false;
            }
        }
        let (Some(bytes_first), Some(bytes_second)) = (
            Self::probe_bytes(plan, &first, probe),
            Self::probe_bytes(plan, &second, probe),
        ) else {
            return false;
        };
        // Strict improvement only; ties keep the written order.
        bytes_second < bytes_first
    }

    fn apply(
        &self,
        g: &mut ExprGraph,
        plan: &IngestPlan,
        node: NodeId,
        _ctx: &OptimizeCtx,
    ) -> Result<String, OptimizerError> {
        let (first, second, producer, marker) =
            Self::candidates(g, plan, node).ok_or_else(|| OptimizerError::InvalidRewrite {
                rule: self.name().into(),
                reason: "pattern vanished between check and apply".into(),
            })?;
        swap_with_producer(g, node, producer, marker);
        Ok(format!("{second} before {first}"))
    }
}

/// Removes a materialize marker when every consumer can stream: the next
/// operator neither changes granularity nor blocks nor shuffles, and the
/// marker does not sit at a stage-union point.
pub struct PipelineRule;

impl PipelineRule {
    /// A consumer can stream past the marker when it neither blocks,
    /// shuffles, changes granularity, nor unions multiple upstreams.
    fn consumer_streams(g: &ExprGraph, plan: &IngestPlan, c: NodeId) -> bool {
        match &g.nodes[c].kind {
            NodeKind::Entry(_) => {
                // Union entries keep their markers.
                if g.nodes[c].inputs.len() > 1 {
                    return false;
                }
                // Look through the entry to the stage's first operator.
                let first_op = g.consumers(c).into_iter().find_map(|n| match &g.nodes[n].kind {
                    NodeKind::Op(name) => Some(name.clone()),
                    _ => None,
                });
                match first_op {
                    Some(name) => signature_of(plan, &name).is_some_and(|s| streamable(&s)),
                    None => true,
                }
            }
            NodeKind::Op(name) => signature_of(plan, name).is_some_and(|s| streamable(&s)),
            _ => false,
        }
    }

    fn streaming_consumers(g: &ExprGraph, plan: &IngestPlan, marker: NodeId) -> Vec<NodeId> {
        if g.nodes[marker].kind != NodeKind::Marker {
            return Vec::new();
        }
        g.consumers(marker)
            .into_iter()
            .filter(|&c| Self::consumer_streams(g, plan, c))
            .collect()
    }
}

impl RewriteRule for PipelineRule {
    fn name(&self) -> &str {
        "operator-pipelining"
    }

    fn check(&self, g: &ExprGraph, plan: &IngestPlan, node: NodeId, _ctx: &OptimizeCtx) -> bool {
        !Self::streaming_consumers(g, plan, node).is_empty()
    }

    fn apply(
        &self,
        g: &mut ExprGraph,
        plan: &IngestPlan,
        node: NodeId,
        _ctx: &OptimizeCtx,
    ) -> Result<String, OptimizerError> {
        let producer = *g.nodes[node].inputs.first().ok_or_else(|| {
            OptimizerError::InvalidRewrite {
                rule: self.name().into(),
                reason: "marker without producer".into(),
            }
        })?;
        let desc = format!("pipelined through {}", g.describe(producer));
        // Streaming consumers bypass the marker; blocking consumers keep it
        // as their checkpoint.
        for c in Self::streaming_consumers(g, plan, node) {
            for input in &mut g.nodes[c].inputs {
                if *input == node {
                    *input = producer;
                }
            }
        }
        if g.consumers(node).is_empty() {
            g.nodes[node].kind = NodeKind::Removed;
            g.nodes[node].inputs.clear();
        }
        Ok(desc)
    }
}

pub fn default_rules() -> Vec<Box<dyn RewriteRule>> {
    vec![
        Box::new(ReplicatePushdown),
        Box::new(FilterProjectSwap),
        Box::new(PipelineRule),
    ]
}

/// Derives pipelined blocks: connected components over non-marker edges,
/// ordered topologically.
pub fn derive_blocks(g: &ExprGraph) -> Vec<PipelinedBlock> {
    let n = g.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, node) in g.nodes.iter().enumerate() {
        if matches!(node.kind, NodeKind::Marker | NodeKind::Removed) {
            continue;
        }
        for &input in &node.inputs {
            if matches!(g.nodes[input].kind, NodeKind::Marker | NodeKind::Removed) {
                continue;
            }
            let (a, b) = (find(&mut parent, i), find(&mut parent, input));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let topo = g.topo();
    let mut blocks: Vec<(usize, Vec<NodeId>)> = Vec::new();
    let mut block_of: HashMap<usize, usize> = HashMap::new();
    for &id in &topo {
        if matches!(g.nodes[id].kind, NodeKind::Marker | NodeKind::Removed) {
            continue;
        }
        let root = find(&mut parent, id);
        let block_idx = *block_of.entry(root).or_insert_with(|| {
            blocks.push((blocks.len(), Vec::new()));
            blocks.len() - 1
        });
        blocks[block_idx].1.push(id);
    }
    blocks
        .into_iter()
        .map(|(_, nodes)| PipelinedBlock { nodes })
        .filter(|b| {
            b.nodes
                .iter()
                .any(|&id| matches!(g.nodes[id].kind, NodeKind::Op(_)))
        })
        .collect()
}

/// Builds the executable form without firing any rules: a marker after
/// every operator, one block per operator.
pub fn build_unoptimized(plan: &IngestPlan) -> ExecPlan {
    let graph = build_expr_graph(plan);
    let blocks = derive_blocks(&graph);
    ExecPlan {
        plan: plan.clone(),
        graph,
        blocks,
        trace: Vec::new(),
    }
}

/// Optimizes a plan with an ordered rule set: preorder traversal from the
/// roots, rules in set order, iterated until none match, bounded by the
/// rewrite budget.
pub fn optimize_plan(
    plan: &IngestPlan,
    rules: &[Box<dyn RewriteRule>],
    ctx: &OptimizeCtx,
) -> Result<ExecPlan, OptimizerError> {
    let mut graph = build_expr_graph(plan);
    let budget = ctx.budget.unwrap_or(10 * plan.ops.len().max(1));
    let mut fired = 0usize;
    let mut trace = Vec::new();
    let mut iteration = 0usize;
    loop {
        iteration += 1;
        let mut any = false;
        // Rules in set order; within a rule, preorder from the roots so
        // larger subtrees match before their descendants. Any firing
        // restarts from the first rule, so earlier rules reach their
        // fixpoint before later ones act on the rewritten graph.
        'sweep: for rule in rules {
            let mut order = Vec::new();
            let mut seen = vec![false; graph.nodes.len()];
            let mut stack = graph.roots();
            while let Some(id) = stack.pop() {
                if seen[id] {
                    continue;
                }
                seen[id] = true;
                order.push(id);
                for &input in graph.nodes[id].inputs.iter().rev() {
                    stack.push(input);
                }
            }
            for id in order {
                if rule.check(&graph, plan, id, ctx) {
                    fired += 1;
                    if fired > budget {
                        return Err(OptimizerError::BudgetExceeded(budget));
                    }
                    let subtree = rule.apply(&mut graph, plan, id, ctx)?;
                    trace.push(RuleFiring {
                        rule: rule.name().to_string(),
                        subtree,
                        iteration,
                    });
                    any = true;
                    break 'sweep;
                }
            }
        }
        if !any {
            break;
        }
    }
    validate_graph(&graph, plan)?;
    let blocks = derive_blocks(&graph);
    Ok(ExecPlan {
        plan: plan.clone(),
        graph,
        blocks,
        trace,
    })
}

/// Post-rewrite validation: every operator must still accept its producer's
/// output granularity. A failure here means a rule emitted a broken plan.
fn validate_graph(g: &ExprGraph, plan: &IngestPlan) -> Result<(), OptimizerError> {
    // Granularity flowing out of each node.
    let mut out_gran: HashMap<NodeId, Option<crate::item::Granularity>> = HashMap::new();
    for id in g.topo() {
        let node = &g.nodes[id];
        let gran = match &node.kind {
            NodeKind::Source(_) => Some(crate::item::Granularity::File),
            NodeKind::Marker | NodeKind::Entry(_) => node
                .inputs
                .first()
                .and_then(|i| out_gran.get(i).copied().flatten()),
            NodeKind::Op(name) => {
                let sig = signature_of(plan, name).ok_or_else(|| {
                    OptimizerError::InvalidRewrite {
                        rule: "validation".into(),
                        reason: format!("unknown operator {name}"),
                    }
                })?;
                let input = node
                    .inputs
                    .first()
                    .and_then(|i| out_gran.get(i).copied().flatten());
                if let Some(g_in) = input {
                    if !sig.input.accepts(g_in) {
                        return Err(OptimizerError::InvalidRewrite {
                            rule: "validation".into(),
                            reason: format!(
                                "operator {name} expects {} but receives {g_in}",
                                sig.input.describe()
                            ),
                        });
                    }
                    Some(sig.output.resolve(g_in))
                } else {
                    match sig.output {
                        GranOut::Fixed(g) => Some(g),
                        GranOut::SameAsInput => None,
                    }
                }
            }
            NodeKind::Removed => None,
        };
        out_gran.insert(id, gran);
    }
    Ok(())
}

/// Deterministic text rendering of the executable structure, used by
/// `--explain`.
pub fn render_exec(exec: &ExecPlan) -> String {
    let mut out = String::new();
    for (idx, block) in exec.blocks.iter().enumerate() {
        out.push_str(&format!("block {}:\n", idx + 1));
        for &id in &block.nodes {
            let node = &exec.graph.nodes[id];
            match &node.kind {
                NodeKind::Source(s) => out.push_str(&format!("  source {s}\n")),
                NodeKind::Entry(s) => {
                    let stage = exec.plan.stage(s).unwrap();
                    if stage.predicates.is_empty() {
                        out.push_str(&format!("  enter stage {s}\n"));
                    } else {
                        let preds: Vec<String> =
                            stage.predicates.iter().map(|p| p.render()).collect();
                        out.push_str(&format!("  enter stage {s} where {}\n", preds.join(", ")));
                    }
                }
                NodeKind::Op(o) => out.push_str(&format!("  op {o}\n")),
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile::tests::{log_registry, LOG_PROGRAM};
    use crate::lang::compile::{compile_to_plan, CompileOptions};
    use crate::lang::parser::parse_program;

    fn log_plan() -> IngestPlan {
        let program = parse_program(LOG_PROGRAM).unwrap();
        compile_to_plan(&program, &log_registry(), &CompileOptions::default()).unwrap()
    }

    fn op_position(g: &ExprGraph, name: &str) -> NodeId {
        g.nodes
            .iter()
            .position(|n| n.kind == NodeKind::Op(name.to_string()))
            .unwrap()
    }

    /// Chain of op names upstream of a node, nearest first.
    fn upstream_ops(g: &ExprGraph, mut id: NodeId) -> Vec<String> {
        let mut out = Vec::new();
        loop {
            let Some(&input) = g.nodes[id].inputs.first() else {
                return out;
            };
            if let NodeKind::Op(name) = &g.nodes[input].kind {
                out.push(name.clone());
            }
            id = input;
        }
    }

    #[test]
    fn empty_rule_set_changes_nothing() {
        let plan = log_plan();
        let exec = optimize_plan(&plan, &[], &OptimizeCtx::default()).unwrap();
        assert!(exec.trace.is_empty());
        // All markers still present: one block per operator.
        assert_eq!(exec.blocks.len(), plan.ops.len());
    }

    #[test]
    fn reordering_moves_replicate_to_stage_end() {
        let plan = log_plan();
        let rules: Vec<Box<dyn RewriteRule>> = vec![Box::new(ReplicatePushdown)];
        let exec = optimize_plan(&plan, &rules, &OptimizeCtx::default()).unwrap();
        // Stage b was [replicate2, c100mb1]; replicate2 now runs after the
        // chunker.
        let rep2 = op_position(&exec.graph, "replicate2");
        let ups = upstream_ops(&exec.graph, rep2);
        assert_eq!(ups.first().map(String::as_str), Some("c100mb1"));
        assert!(exec
            .trace
            .iter()
            .any(|f| f.rule == "replicate-pushdown"));
    }

    #[test]
    fn pipelining_yields_five_blocks_on_log_plan() {
        let plan = log_plan();
        let rules: Vec<Box<dyn RewriteRule>> = vec![Box::new(PipelineRule)];
        let exec = optimize_plan(&plan, &rules, &OptimizeCtx::default()).unwrap();
        assert_eq!(exec.blocks.len(), 5, "{}", render_exec(&exec));
    }

    #[test]
    fn both_rules_still_yield_five_blocks() {
        let plan = log_plan();
        let exec = optimize_plan(&plan, &default_rules(), &OptimizeCtx::default()).unwrap();
        assert_eq!(exec.blocks.len(), 5, "{}", render_exec(&exec));
    }

    #[test]
    fn marker_kept_at_granularity_change_and_unions() {
        let plan = log_plan();
        let exec = optimize_plan(&plan, &default_rules(), &OptimizeCtx::default()).unwrap();
        let g = &exec.graph;
        // Before each chunker: producer reached through a marker.
        for chunker in ["c100mb1", "c100mb2"] {
            let id = op_position(g, chunker);
            let input = g.nodes[id].inputs[0];
            let mut boundary = input;
            // Look back through the entry to the marker.
            loop {
                match &g.nodes[boundary].kind {
                    NodeKind::Marker => break,
                    NodeKind::Entry(_) => boundary = g.nodes[boundary].inputs[0],
                    other => panic!("expected marker before {chunker}, found {other:?}"),
                }
            }
        }
        // Union entries (stages f, g) read markers.
        for stage in ["f", "g"] {
            let entry = g
                .nodes
                .iter()
                .position(|n| n.kind == NodeKind::Entry(stage.to_string()))
                .unwrap();
            assert!(g.nodes[entry].inputs.len() > 1);
            for &input in &g.nodes[entry].inputs {
                assert_eq!(g.nodes[input].kind, NodeKind::Marker);
            }
        }
    }

    #[test]
    fn filter_project_swap_uses_probe_estimate() {
        use crate::item::{Schema, Value};
        use std::sync::Arc;
        let registry = crate::lang::Registry::parse(
            r#"
            parser = csv_parse(schema="a:int64,big:string,c:int64")
            narrow = scope_project(attrs="a")
            weak = scope_filter(pred="a >= 0")
            c1 = chunk_by_size(max_bytes=4096)
            up = store
            "#,
        )
        .unwrap();
        // Filter first as written, but it keeps ~everything while the
        // projection sheds the wide column: projection should run first.
        let text = "s1 = SELECT a FROM input USING parser WHERE weak;\ns2 = FORMAT s1 CHUNK BY c1;\ns3 = STORE s2 UPLOAD TO up;";
        let program = parse_program(text).unwrap();
        let plan = compile_to_plan(&program, &registry, &CompileOptions::default()).unwrap();
        // Chain is parser -> weak -> project.
        assert_eq!(
            plan.stage("main").unwrap().chain[..3],
            ["parser".to_string(), "weak".to_string(), "project".to_string()]
        );
        let schema = Arc::new(Schema::parse("a:int64,big:string,c:int64").unwrap());
        let probe: Vec<Record> = (0..100)
            .map(|i| {
                Record::new(
                    schema.clone(),
                    vec![
                        Value::Int(i),
                        Value::Str("x".repeat(100)),
                        Value::Int(i),
                    ],
                )
            })
            .collect();
        let ctx = OptimizeCtx {
            probe: Some(probe),
            budget: None,
        };
        let exec = optimize_plan(&plan, &default_rules(), &ctx).unwrap();
        let project = op_position(&exec.graph, "project");
        let ups = upstream_ops(&exec.graph, project);
        // Project now directly consumes the parser; filter follows it.
        assert_eq!(ups.first().map(String::as_str), Some("parser"));
        let weak = op_position(&exec.graph, "weak");
        let ups = upstream_ops(&exec.graph, weak);
        assert_eq!(ups.first().map(String::as_str), Some("project"));
        assert!(exec.trace.iter().any(|f| f.rule == "filter-project-swap"));
    }

    #[test]
    fn already_optimal_order_is_left_alone() {
        use crate::item::{Schema, Value};
        use std::sync::Arc;
        let registry = crate::lang::Registry::parse(
            r#"
            parser = csv_parse(schema="a:int64,big:string")
            strong = scope_filter(pred="a < 10")
            wide = scope_project(attrs="a,big")
            c1 = chunk_by_size(max_bytes=4096)
            up = store
            "#,
        )
        .unwrap();
        let text = "s1 = SELECT a, big FROM input USING parser WHERE strong;\ns2 = FORMAT s1 CHUNK BY c1;\ns3 = STORE s2 UPLOAD TO up;";
        let program = parse_program(text).unwrap();
        let plan = compile_to_plan(&program, &registry, &CompileOptions::default()).unwrap();
        let schema = Arc::new(Schema::parse("a:int64,big:string").unwrap());
        let probe: Vec<Record> = (0..1000)
            .map(|i| Record::new(schema.clone(), vec![Value::Int(i), Value::Str("pad".into())]))
            .collect();
        let ctx = OptimizeCtx {
            probe: Some(probe),
            budget: None,
        };
        let exec = optimize_plan(&plan, &default_rules(), &ctx).unwrap();
        assert!(!exec.trace.iter().any(|f| f.rule == "filter-project-swap"));
    }

    /// Termination within budget on randomly generated linear plans.
    #[test]
    fn optimizer_terminates_on_generated_plans() {
        let registry = crate::lang::Registry::parse(
            r#"
            parser = csv_parse(schema="a:int64,b:string")
            f1 = scope_filter(pred="a >= 0")
            pr = scope_project(attrs="a")
            part = partition(kind="hash", key="a", buckets=4)
            c1 = chunk_by_size(max_bytes=512)
            ser = serialize(layout="binary_row")
            up = store
            "#,
        )
        .unwrap();
        let mut state = 0x5eed_5eedu64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..40 {
            // Random record-level middle section of up to 14 operators.
            let middle_ops = ["f1", "pr", "part"];
            let mut text = String::from("s1 = SELECT * FROM input USING parser");
            let n_mid = (rnd() % 5) as usize;
            let mut stmt = 2;
            if rnd() % 2 == 0 {
                text.push_str(" REPLICATE BY 2");
            }
            text.push(';');
            let mut prev = "s1".to_string();
            for _ in 0..n_mid {
                let op = middle_ops[(rnd() % 3) as usize];
                if op == "pr" {
                    continue; // projection drops attrs others may need
                }
                let clause = if op == "part" {
                    format!("PARTITION BY {op}")
                } else {
                    // filters ride along in a SELECT
                    text.push_str(&format!("\ns{stmt} = SELECT * FROM {prev} WHERE f1;"));
                    prev = format!("s{stmt}");
                    stmt += 1;
                    continue;
                };
                text.push_str(&format!("\ns{stmt} = FORMAT {prev} {clause};"));
                prev = format!("s{stmt}");
                stmt += 1;
            }
            text.push_str(&format!(
                "\ns{stmt} = FORMAT {prev} CHUNK BY c1 SERIALIZE AS ser;"
            ));
            prev = format!("s{stmt}");
            stmt += 1;
            text.push_str(&format!("\ns{stmt} = STORE {prev} UPLOAD TO up;"));

            let program = parse_program(&text).unwrap();
            let plan = compile_to_plan(&program, &registry, &CompileOptions::default());
            let Ok(plan) = plan else { continue };
            let exec = optimize_plan(&plan, &default_rules(), &OptimizeCtx::default()).unwrap();
            assert!(!exec.blocks.is_empty());
        }
    }
}
