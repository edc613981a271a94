//! Compilation of parsed programs into validated ingestion plans.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use crate::item::{Granularity, Schema};
use crate::lang::ast::*;
use crate::lang::registry::{resolve_operator_ref, Registry};
use crate::lang::LangError;
use crate::op::{chain_output, validate_chain, OpSignature};
use crate::oplib;
use crate::plan::{IngestPlan, LabelPredicate, OpSpec, Stage, PLAN_VERSION};

#[derive(Debug, Clone)]
pub struct CompileOptions {
    /// Value of `now` in stage predicates (epoch hours), resolved at
    /// compile time.
    pub now: i64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { now: 0 }
    }
}

/// The operators one statement contributes to its stage's chain, in order.
fn statement_oprefs(
    name: &str,
    stmt: &Statement,
    registry: &Registry,
) -> Result<Vec<(String, OpSpec)>, LangError> {
    let mut ops = Vec::new();
    match stmt {
        Statement::Select(sel) => {
            // Paper-fixed chaining: parser -> filter -> projection -> replicator.
            if let Some(using) = &sel.using {
                ops.push(resolve_operator_ref(using, registry)?);
            }
            if let Some(filter) = &sel.filter {
                ops.push(resolve_operator_ref(filter, registry)?);
            }
            match &sel.projection {
                Projection::Star => {}
                Projection::Names(names) => {
                    // A single name bound in the registry is a custom
                    // projection operator; otherwise the names are schema
                    // attributes for the built-in scope projection.
                    if names.len() == 1 && registry.entries.contains_key(&names[0]) {
                        let opref = OpRef {
                            name: names[0].clone(),
                            args: Vec::new(),
                            pos: Pos::default(),
                        };
                        ops.push(resolve_operator_ref(&opref, registry)?);
                    } else {
                        let spec = OpSpec::new("", "scope_project").with(
                            "attrs",
                            crate::plan::ParamValue::Str(names.join(",")),
                        );
                        ops.push(("project".to_string(), spec));
                    }
                }
            }
            if let Some(rep) = &sel.replicate {
                match rep {
                    ReplicateBy::K(k) => {
                        let spec = OpSpec::new("", "replicate_k")
                            .with("k", crate::plan::ParamValue::Int(*k));
                        ops.push(("replicate".to_string(), spec));
                    }
                    ReplicateBy::Op(opref) => ops.push(resolve_operator_ref(opref, registry)?),
                }
            }
        }
        Statement::Format(fmt) => {
            for (_, opref) in &fmt.clauses {
                ops.push(resolve_operator_ref(opref, registry)?);
            }
        }
        Statement::Store(store) => {
            if let Some(locate) = &store.locate {
                ops.push(resolve_operator_ref(locate, registry)?);
            }
            if let Some(upload) = &store.upload {
                ops.push(resolve_operator_ref(upload, registry)?);
            }
        }
    }
    let _ = name;
    Ok(ops)
}

fn statement_inputs(stmt: &Statement) -> Vec<&str> {
    match stmt {
        Statement::Select(sel) => vec![sel.from.as_str()],
        Statement::Format(fmt) => fmt.inputs.iter().map(String::as_str).collect(),
        Statement::Store(store) => store.inputs.iter().map(String::as_str).collect(),
    }
}

/// Compiles a program against a registry into a validated plan.
pub fn compile_to_plan(
    program: &Program,
    registry: &Registry,
    opts: &CompileOptions,
) -> Result<IngestPlan, LangError> {
    // Resolve every statement's operators.
    let mut resolved: Vec<(String, Vec<(String, OpSpec)>)> = Vec::new();
    for a in &program.assignments {
        resolved.push((a.name.clone(), statement_oprefs(&a.name, &a.stmt, registry)?));
    }

    // Instance naming: a base name used once keeps its name; repeated base
    // names get 1-based suffixes in order of appearance.
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, ops) in &resolved {
        for (base, _) in ops {
            *counts.entry(base.clone()).or_insert(0) += 1;
        }
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut statement_chains: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut op_map: BTreeMap<String, OpSpec> = BTreeMap::new();
    for (stmt_name, ops) in &resolved {
        let mut chain = Vec::new();
        for (base, spec) in ops {
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            let instance = if counts[base] > 1 {
                format!("{base}{n}")
            } else {
                base.clone()
            };
            let mut spec = spec.clone();
            spec.instance = instance.clone();
            // Parameters must be valid: computing the signature checks them.
            oplib::signature(&spec)?;
            op_map.insert(instance.clone(), spec);
            chain.push(instance);
        }
        statement_chains.insert(stmt_name.clone(), chain);
    }

    // Known names: statements vs raw sources.
    let statement_names: HashSet<&str> = program
        .assignments
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    for a in &program.assignments {
        for input in statement_inputs(&a.stmt) {
            if !statement_names.contains(input) {
                // A raw source binding; recorded below via first use.
                continue;
            }
        }
    }

    // Stages: explicit statements, or one implicit stage using everything.
    let mut stages: Vec<Stage> = Vec::new();
    if program.stage_stmts.is_empty() {
        stages.push(Stage {
            name: "main".to_string(),
            upstreams: Vec::new(),
            predicates: Vec::new(),
            chain: Vec::new(),
            statements: program.assignments.iter().map(|a| a.name.clone()).collect(),
        });
    } else {
        for s in &program.stage_stmts {
            let upstreams = match &s.kind {
                StageKind::Create => Vec::new(),
                StageKind::Chain { upstreams } => upstreams.clone(),
            };
            let predicates = s
                .predicates
                .iter()
                .map(|p| LabelPredicate {
                    op_name: p.op_name.clone(),
                    cmp: p.cmp,
                    value: match &p.rhs {
                        PredRhs::Int(v) => v.to_string(),
                        PredRhs::Str(v) => v.clone(),
                        PredRhs::Now { offset } => (opts.now + offset).to_string(),
                    },
                })
                .collect();
            stages.push(Stage {
                name: s.name.clone(),
                upstreams,
                predicates,
                chain: Vec::new(),
                statements: s.using.clone(),
            });
        }
    }

    // Statements must exist and be used by at most one stage.
    let mut used: HashSet<String> = HashSet::new();
    for stage in &mut stages {
        let mut chain = Vec::new();
        for stmt in &stage.statements {
            if !statement_names.contains(stmt.as_str()) {
                return Err(LangError::UnknownStatement(stmt.clone()));
            }
            if !used.insert(stmt.clone()) {
                return Err(LangError::StatementReused(stmt.clone()));
            }
            chain.extend(statement_chains[stmt].iter().cloned());
        }
        stage.chain = chain;
    }

    // Stage DAG: known upstreams, topological order (Kahn, declaration
    // order tie-break), cycle detection.
    let stage_index: HashMap<String, usize> =
        stages.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
    for s in &stages {
        for up in &s.upstreams {
            if !stage_index.contains_key(up) {
                return Err(LangError::UnknownStage(up.clone()));
            }
        }
    }
    let n = stages.len();
    let mut indegree = vec![0usize; n];
    let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in stages.iter().enumerate() {
        for up in &s.upstreams {
            let u = stage_index[up];
            indegree[i] += 1;
            downstream[u].push(i);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(i) = ready.first().copied() {
        ready.remove(0);
        order.push(i);
        for &d in &downstream[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                // Keep declaration order among newly-ready stages.
                let pos = ready.partition_point(|&r| r < d);
                ready.insert(pos, d);
            }
        }
    }
    if order.len() != n {
        return Err(LangError::CyclicStages);
    }
    let stages: Vec<Stage> = order.iter().map(|&i| stages[i].clone()).collect();

    // Sources: FROM names that are not statements, bound to the source
    // stages that read them. First-use order defines their slots.
    let mut sources: Vec<String> = Vec::new();
    for a in &program.assignments {
        for input in statement_inputs(&a.stmt) {
            if !statement_names.contains(input) && !sources.iter().any(|s| s == input) {
                sources.push(input.to_string());
            }
        }
    }

    // Predicate validation: the referenced operator must be assigned in a
    // transitive upstream stage.
    let ancestors = |stage: &Stage| -> HashSet<String> {
        let mut set = HashSet::new();
        let mut queue: Vec<&str> = stage.upstreams.iter().map(String::as_str).collect();
        while let Some(name) = queue.pop() {
            let s = stages.iter().find(|s| s.name == name).unwrap();
            for op in &s.chain {
                set.insert(op.clone());
            }
            queue.extend(s.upstreams.iter().map(String::as_str));
        }
        set
    };
    for stage in &stages {
        let upstream_ops = ancestors(stage);
        for pred in &stage.predicates {
            if !upstream_ops.contains(&pred.op_name) {
                return Err(LangError::UnboundLabelPredicate {
                    stage: stage.name.clone(),
                    op: pred.op_name.clone(),
                });
            }
        }
    }

    // Granularity and schema flow through the stage DAG; every stage chain
    // must validate, and unions must agree on granularity.
    let mut flows: HashMap<String, (Granularity, Option<Arc<Schema>>)> = HashMap::new();
    for stage in &stages {
        let (entry_gran, entry_schema) = if stage.is_source() {
            (Granularity::File, None)
        } else {
            let mut grans = Vec::new();
            let mut schemas = Vec::new();
            for up in &stage.upstreams {
                let (g, s) = flows
                    .get(up)
                    .cloned()
                    .expect("topological order guarantees upstream flow");
                grans.push(g);
                schemas.push(s);
            }
            let first = grans[0];
            if grans.iter().any(|g| *g != first) {
                return Err(LangError::StageInputMismatch {
                    stage: stage.name.clone(),
                });
            }
            let schema = if schemas.windows(2).all(|w| w[0] == w[1]) {
                schemas.into_iter().next().unwrap()
            } else {
                None
            };
            (first, schema)
        };
        let sigs: Vec<OpSignature> = stage
            .chain
            .iter()
            .map(|op| oplib::signature(&op_map[op]))
            .collect::<Result<_, _>>()?;
        let violations = validate_chain(&sigs, entry_gran, entry_schema.clone());
        if !violations.is_empty() {
            return Err(LangError::from_violations(&stage.name, &violations));
        }
        let out = chain_output(&sigs, entry_gran, entry_schema);
        flows.insert(stage.name.clone(), out);
    }

    // Canonical filename slots: sources first, then chain order per stage
    // in topological order. Fixed here, never changed by optimization.
    let mut slots = sources.clone();
    for stage in &stages {
        slots.extend(stage.chain.iter().cloned());
    }

    Ok(IngestPlan {
        version: PLAN_VERSION.to_string(),
        program: program.clone(),
        stages,
        sources,
        ops: op_map,
        slots,
    })
}

/// Recomputes the record schema flowing into each operator instance.
/// Used by access-time deserialization and transformation recovery.
pub fn schema_into_ops(
    plan: &IngestPlan,
) -> Result<BTreeMap<String, Option<Arc<Schema>>>, LangError> {
    let mut flows: HashMap<String, (Granularity, Option<Arc<Schema>>)> = HashMap::new();
    let mut result = BTreeMap::new();
    for stage in &plan.stages {
        let (mut gran, mut schema) = if stage.is_source() {
            (Granularity::File, None)
        } else {
            let mut grans = Vec::new();
            let mut schemas = Vec::new();
            for up in &stage.upstreams {
                let (g, s) = flows.get(up).cloned().unwrap_or((Granularity::File, None));
                grans.push(g);
                schemas.push(s);
            }
            let schema = if schemas.windows(2).all(|w| w[0] == w[1]) {
                schemas.into_iter().next().flatten()
            } else {
                None
            };
            (grans[0], schema)
        };
        for op in &stage.chain {
            result.insert(op.clone(), schema.clone());
            let sig = oplib::signature(&plan.ops[op])?;
            schema = crate::op::apply_schema_effect(&sig.schema_effect, schema);
            gran = sig.output.resolve(gran);
        }
        flows.insert(stage.name.clone(), (gran, schema));
    }
    Ok(result)
}
