//! The scenario harness: checked-in ingestion programs for the case-study
//! workloads (cleaning, sampling, analytics layouts, storage-space
//! schemes), executed end to end with oracle-backed verification.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{self, AccessError};
use crate::cluster::{create_cluster, Cluster, ClusterError, NodeId};
use crate::gen::{self, GenSpec, GenTruth, Table};
use crate::item::{Record, Value};
use crate::lang::{self, LangError};
use crate::layout::IoStats;
use crate::optimizer::{self, OptimizeCtx, OptimizerError};
use crate::plan::IngestPlan;
use crate::pred::Predicate;
use crate::recovery::{
    daemon_cycle, ErasureRecovery, RecoveryCatalog, RecoverySpec, RecoveryStats, ReplicationRecovery,
    TransformationRecovery,
};
use crate::runtime::{self, ExecConfig, ExecutionReport, InputBinding, RuntimeError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0}")]
    UnknownScenario(String),
    #[error("scenario failed at check `{check}`: {details}")]
    ScenarioFailed { check: String, details: String },
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Recovery(#[from] crate::recovery::RecoveryError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

pub const SCENARIO_IDS: &[&str] = &[
    "fd-check",
    "dc-check",
    "dc-repair",
    "bernoulli",
    "reservoir",
    "stratified-local",
    "stratified-global",
    "per-replica-layouts",
    "hybrid-replicas",
    "content-partition",
    "content-placement",
    "flexible-replication",
    "erasure",
    "flexible-erasure",
    "mixed-replication-erasure",
];

/// Checked-in program and registry text for a scenario id.
pub fn program_text(id: &str) -> Option<(&'static str, &'static str)> {
    macro_rules! programs {
        ($($name:literal),* $(,)?) => {
            match id {
                $($name => Some((
                    include_str!(concat!("../programs/", $name, ".ing")),
                    include_str!(concat!("../programs/", $name, ".reg")),
                )),)*
                _ => None,
            }
        };
    }
    programs!(
        "fd-check",
        "dc-check",
        "dc-repair",
        "bernoulli",
        "reservoir",
        "stratified-local",
        "stratified-global",
        "per-replica-layouts",
        "hybrid-replicas",
        "content-partition",
        "content-placement",
        "flexible-replication",
        "erasure",
        "flexible-erasure",
        "mixed-replication-erasure",
        "copart-lineitem",
        "copart-orders",
        "access-demo",
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub rows: u64,
    pub nodes: usize,
    pub seed: u64,
    pub pool_size: usize,
}

impl ScenarioParams {
    pub fn default_for(id: &str) -> ScenarioParams {
        let (rows, nodes) = match id {
            "fd-check" | "dc-check" | "dc-repair" => (20_000, 3),
            "bernoulli" => (100_000, 3),
            "reservoir" => (10_000, 3),
            "stratified-local" | "stratified-global" => (20_000, 3),
            "erasure" | "flexible-erasure" | "mixed-replication-erasure" => (2_000, 7),
            _ => (8_000, 3),
        };
        ScenarioParams {
            rows,
            nodes,
            seed: 0,
            pool_size: std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub wall_ms: u64,
    pub rows: u64,
    pub files_stored: usize,
    pub logical_bytes: u64,
    pub physical_bytes: u64,
    pub shuffle_bytes: u64,
    pub manifest_fingerprint: String,
}

fn gen_spec_for(id: &str, params: &ScenarioParams) -> GenSpec {
    let mut spec = GenSpec::new(Table::Lineitem, params.rows, params.seed);
    // The part count is fixed per scenario, never derived from the node
    // count, so the stored outcome is identical however the files are
    // spread over nodes. Erasure scenarios use one part: a single chunk
    // group keeps every block the same size, which makes the storage
    // overhead arithmetic exact.
    spec.parts = match id {
        "erasure" | "flexible-erasure" | "mixed-replication-erasure" => 1,
        _ => 6,
    };
    match id {
        "dc-check" | "dc-repair" => spec.dc_rate = 0.01,
        "fd-check" => spec.fd_rate = 0.005,
        _ => {}
    }
    spec
}

/// Parses probe records for the optimizer's reduction estimates from the
/// first input file, using the plan's own parser configuration.
pub fn probe_records(plan: &IngestPlan, file: &Path, limit: usize) -> Option<Vec<Record>> {
    let parser = plan.ops.values().find(|s| s.builtin == "csv_parse")?;
    let schema = Arc::new(crate::item::Schema::parse(parser.str("schema")?).ok()?);
    let delimiter = parser.str("delimiter").unwrap_or(",").chars().next()?;
    let text = std::fs::read_to_string(file).ok()?;
    let mut out = Vec::new();
    for line in text.lines().take(limit) {
        let fields: Vec<&str> = line.split(delimiter).collect();
        if fields.len() != schema.attributes.len() {
            continue;
        }
        let values: Option<Vec<Value>> = fields
            .iter()
            .zip(&schema.attributes)
            .map(|(f, (_, ty))| Value::parse_as(*ty, f))
            .collect();
        out.push(Record::new(schema.clone(), values?));
    }
    (!out.is_empty()).then_some(out)
}

/// Contiguous file-to-node assignment: file i goes to node i*nodes/files,
/// so concatenation order is independent of the node count.
pub fn bindings_for(truth: &GenTruth, nodes: usize, source: &str) -> Vec<InputBinding> {
    let files = truth.files.len().max(1);
    let mut per_unit: BTreeMap<usize, Vec<(u64, PathBuf)>> = BTreeMap::new();
    for (i, f) in truth.files.iter().enumerate() {
        let unit = i * nodes / files;
        per_unit
            .entry(unit.min(nodes - 1))
            .or_default()
            .push((i as u64, PathBuf::from(f)));
    }
    per_unit
        .into_iter()
        .map(|(unit, files)| InputBinding {
            unit,
            source: source.to_string(),
            files,
            replicated: true,
        })
        .collect()
}

pub struct ScenarioRun {
    pub plan: IngestPlan,
    pub registry: lang::Registry,
    pub cluster: Arc<Cluster>,
    pub truth: GenTruth,
    pub report: ExecutionReport,
}

/// Compiles, optimizes and executes a checked-in program over generated
/// data. Reusable by the acceptance suite and the CLI.
pub fn ingest_scenario(
    id: &str,
    root: &Path,
    params: &ScenarioParams,
) -> Result<ScenarioRun, ScenarioError> {
    let (program_text, registry_text) =
        program_text(id).ok_or_else(|| ScenarioError::UnknownScenario(id.to_string()))?;
    let data_dir = root.join("data").join(id);
    let spec = gen_spec_for(id, params);
    let truth = gen::gen_data(&spec, &data_dir)?;

    let cluster = Arc::new(create_cluster(
        params.nodes,
        &root.join("cluster").join(id),
        3,
        true,
    )?);
    let registry = lang::Registry::parse(registry_text)?;
    let program = lang::parse_program(program_text)?;
    let plan = lang::compile_to_plan(&program, &registry, &lang::CompileOptions::default())?;

    let probe = truth
        .files
        .first()
        .and_then(|f| probe_records(&plan, Path::new(f), 1000));
    let exec = optimizer::optimize_plan(
        &plan,
        &optimizer::default_rules(),
        &OptimizeCtx {
            probe,
            budget: None,
        },
    )?;

    let bindings = bindings_for(&truth, params.nodes, "input");
    let mut cfg = ExecConfig::new(id);
    cfg.seed = params.seed;
    cfg.pool_size = params.pool_size;
    let report = runtime::execute_plan(&exec, &bindings, cluster.clone(), &cfg)?;
    access::persist_plan(&plan, &registry, &cluster, id)?;
    Ok(ScenarioRun {
        plan,
        registry,
        cluster,
        truth,
        report,
    })
}

/// Records of the files whose label at `op` equals `value`.
fn records_with_label(
    run: &ScenarioRun,
    dataset: &str,
    op: &str,
    value: &str,
) -> Result<Vec<Record>, AccessError> {
    let files = access::filter_replica(&run.cluster, &run.plan, dataset, op, value)?;
    let mut stats = IoStats::default();
    access::read_blocks(
        &run.cluster,
        &run.plan,
        dataset,
        &files,
        None,
        None,
        &mut stats,
    )
}

fn keys_of(records: &[Record]) -> BTreeSet<i64> {
    records
        .iter()
        .filter_map(|r| match r.get("linenumber") {
            Ok(Value::Int(v)) => Some(*v),
            _ => None,
        })
        .collect()
}

fn check(checks: &mut Vec<CheckResult>, name: &str, pass: bool, details: String) {
    checks.push(CheckResult {
        name: name.to_string(),
        pass,
        details,
    });
}

/// Runs a scenario end to end: generate, ingest, verify against the
/// generator's ground truth and the structural invariants of the scheme.
pub fn run_scenario(
    id: &str,
    root: &Path,
    params: &ScenarioParams,
) -> Result<ScenarioReport, ScenarioError> {
    let started = Instant::now();
    let run = ingest_scenario(id, root, params)?;
    let mut checks = Vec::new();
    verify_scenario(id, &run, params, &mut checks)?;

    let files = run.cluster.list_dataset(id);
    let report = ScenarioReport {
        id: id.to_string(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        wall_ms: started.elapsed().as_millis() as u64,
        rows: params.rows,
        files_stored: files.len(),
        logical_bytes: files.iter().map(|f| f.size).sum(),
        physical_bytes: run.cluster.physical_bytes(id),
        shuffle_bytes: run.report.shuffle_bytes,
        manifest_fingerprint: run.report.manifest_fingerprint(),
    };
    Ok(report)
}

fn verify_scenario(
    id: &str,
    run: &ScenarioRun,
    params: &ScenarioParams,
    checks: &mut Vec<CheckResult>,
) -> Result<(), ScenarioError> {
    match id {
        "dc-check" => {
            let detected = keys_of(&records_with_label(run, id, "dcCheck", "1")?);
            let expected: BTreeSet<i64> = run.truth.dc_violations.iter().copied().collect();
            check(
                checks,
                "detected set equals sidecar set",
                detected == expected,
                format!("detected {} expected {}", detected.len(), expected.len()),
            );
            let all = records_with_label(run, id, "dcCheck", "0")?.len() + detected.len();
            check(
                checks,
                "base data keeps every record",
                all as u64 == run.truth.rows,
                format!("stored {} of {}", all, run.truth.rows),
            );
        }
        "fd-check" => {
            let detected = keys_of(&records_with_label(run, id, "fdCheck", "1")?);
            let expected: BTreeSet<i64> = run.truth.fd_violations.iter().copied().collect();
            check(
                checks,
                "detected set equals oracle set",
                detected == expected,
                format!("detected {} expected {}", detected.len(), expected.len()),
            );
            check(
                checks,
                "grouping shuffled data",
                run.report.shuffle_bytes > 0,
                format!("shuffle_bytes {}", run.report.shuffle_bytes),
            );
        }
        "dc-repair" => {
            let pred = Predicate::parse("quantity < 3 AND discount > 0.09").unwrap();
            let mut stats = IoStats::default();
            let all_files: Vec<String> = run
                .cluster
                .list_dataset(id)
                .into_iter()
                .map(|f| f.name)
                .collect();
            let records = access::read_blocks(
                &run.cluster,
                &run.plan,
                id,
                &all_files,
                None,
                None,
                &mut stats,
            )?;
            let residual = records
                .iter()
                .filter(|r| pred.matches(r).unwrap_or(false))
                .count();
            check(
                checks,
                "zero residual violations on re-scan",
                residual == 0,
                format!("residual {residual}"),
            );
            let repaired = records_with_label(run, id, "fixDiscount", "1")?.len() as u64;
            check(
                checks,
                "repair count equals injected count",
                repaired == run.truth.injected_dc,
                format!("repaired {repaired} injected {}", run.truth.injected_dc),
            );
            check(
                checks,
                "no records dropped",
                records.len() as u64 == run.truth.rows,
                format!("stored {} of {}", records.len(), run.truth.rows),
            );
        }
        "bernoulli" => {
            let samples = records_with_label(run, id, "sampler", "1")?.len() as f64;
            let n = run.truth.rows as f64;
            let p = 0.1;
            let sigma = (n * p * (1.0 - p)).sqrt();
            let diff = (samples - n * p).abs();
            check(
                checks,
                "sample count within 4 sigma of n*p",
                diff <= 4.0 * sigma,
                format!("samples {samples} expected {} sigma {sigma:.1}", n * p),
            );
            let base = records_with_label(run, id, "sampler", "0")?.len() as u64;
            check(
                checks,
                "base file keeps every record",
                base == run.truth.rows,
                format!("base {base} rows {}", run.truth.rows),
            );
        }
        "reservoir" => {
            let samples = records_with_label(run, id, "res", "1")?;
            let cap = 100;
            let expected = (run.truth.rows as usize).min(cap);
            check(
                checks,
                "reservoir emits min(capacity, n) records",
                samples.len() == expected,
                format!("samples {} expected {expected}", samples.len()),
            );
            let base = records_with_label(run, id, "replicate", "1")?;
            let base_keys = keys_of(&base);
            let sample_keys = keys_of(&samples);
            check(
                checks,
                "samples are members of the dataset",
                sample_keys.is_subset(&base_keys),
                format!("{} sample keys", sample_keys.len()),
            );
        }
        "stratified-local" | "stratified-global" => {
            let samples = records_with_label(run, id, "strat", "1")?;
            let mut got: BTreeMap<String, u64> = BTreeMap::new();
            for r in &samples {
                let flag = r.get("returnflag").map_err(LangError::Core)?.canonical();
                *got.entry(flag).or_insert(0) += 1;
            }
            let rate = 0.1;
            let mut expected: BTreeMap<String, u64> = BTreeMap::new();
            if id == "stratified-local" {
                // Per input file and stratum: round(rate * s).
                for per_file in &run.truth.per_file_returnflag {
                    for (flag, count) in per_file {
                        *expected.entry(flag.clone()).or_insert(0) +=
                            (rate * *count as f64).round() as u64;
                    }
                }
            } else {
                for (flag, count) in &run.truth.histograms["returnflag"] {
                    *expected.entry(flag.clone()).or_insert(0) =
                        (rate * *count as f64).round() as u64;
                }
            }
            check(
                checks,
                "per-stratum counts equal round(rate * s) exactly",
                got == expected,
                format!("got {got:?} expected {expected:?}"),
            );
            if id == "stratified-local" {
                check(
                    checks,
                    "local sampling does not shuffle",
                    run.report.shuffle_bytes == 0,
                    format!("shuffle_bytes {}", run.report.shuffle_bytes),
                );
            } else {
                check(
                    checks,
                    "global sampling shuffles",
                    run.report.shuffle_bytes > 0,
                    format!("shuffle_bytes {}", run.report.shuffle_bytes),
                );
            }
        }
        "per-replica-layouts" => {
            let mut key_sets = Vec::new();
            for replica in ["1", "2", "3"] {
                let records = records_with_label(run, id, "replicate", replica)?;
                check(
                    checks,
                    &format!("replica {replica} holds the full dataset"),
                    records.len() as u64 == run.truth.rows,
                    format!("{} records", records.len()),
                );
                key_sets.push(keys_of(&records));
            }
            check(
                checks,
                "replicas agree record-for-record",
                key_sets.windows(2).all(|w| w[0] == w[1]),
                String::new(),
            );
            // Copies of one block sit at pairwise distinct locations.
            let loc_slot = run.plan.slot_of("disjointLoc").unwrap();
            let rep_slot = run.plan.slot_of("replicate").unwrap();
            let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for f in run.cluster.list_dataset(id) {
                let values = access::file_labels(&run.plan, &f.name)?;
                let mut identity = values.clone();
                identity[rep_slot] = String::new();
                identity[loc_slot] = String::new();
                // Serializer slots differ per replica; blank them too.
                for op in ["binSer", "paxSer", "cpaxSer"] {
                    identity[run.plan.slot_of(op).unwrap()] = String::new();
                }
                groups
                    .entry(identity.join("_"))
                    .or_default()
                    .insert(values[loc_slot].clone());
            }
            check(
                checks,
                "replica copies are anti-located",
                groups.values().all(|locs| locs.len() == 3),
                format!("{} block groups", groups.len()),
            );
        }
        "hybrid-replicas" => {
            let mut total = 0u64;
            for (layout, value) in [("binSer", "binary_row"), ("paxSer", "pax"), ("cpaxSer", "compressed_pax")] {
                let records = records_with_label(run, id, layout, value)?;
                check(
                    checks,
                    &format!("{value} subset is non-empty"),
                    !records.is_empty(),
                    format!("{} records", records.len()),
                );
                total += records.len() as u64;
            }
            check(
                checks,
                "subsets cover the dataset exactly once",
                total == run.truth.rows,
                format!("total {total} rows {}", run.truth.rows),
            );
            let expected_replicas = 3.min(params.nodes);
            let all_replicated = run
                .cluster
                .list_dataset(id)
                .iter()
                .all(|f| f.replicas.len() == expected_replicas);
            check(
                checks,
                "store-level replication applied",
                all_replicated,
                format!("expected {expected_replicas} replicas"),
            );
        }
        "content-partition" | "content-placement" => {
            let bounds: Vec<i64> = run.plan.ops["ranges"]
                .str("bounds")
                .unwrap_or_default()
                .split(',')
                .filter_map(|b| b.trim().parse().ok())
                .collect();
            // Oracle: bucket the raw input by the same boundaries.
            let mut expected: BTreeMap<String, u64> = BTreeMap::new();
            for file in &run.truth.files {
                for line in std::fs::read_to_string(file)?.lines() {
                    let orderkey: i64 = line.split('|').next().unwrap().parse().unwrap();
                    let pid = bounds.iter().position(|b| orderkey < *b).unwrap_or(bounds.len());
                    *expected.entry(pid.to_string()).or_insert(0) += 1;
                }
            }
            let mut got: BTreeMap<String, u64> = BTreeMap::new();
            for pid in expected.keys() {
                got.insert(
                    pid.clone(),
                    records_with_label(run, id, "ranges", pid)?.len() as u64,
                );
            }
            check(
                checks,
                "per-range record counts match the oracle histogram",
                got == expected,
                format!("{} ranges", expected.len()),
            );
            check(
                checks,
                "all ten ranges materialized",
                expected.len() == 10,
                format!("{} ranges", expected.len()),
            );
            if id == "content-placement" {
                let mut ok = true;
                let mut details = String::new();
                for f in run.cluster.list_dataset(id) {
                    let values = access::file_labels(&run.plan, &f.name)?;
                    let pid: u64 = values[run.plan.slot_of("ranges").unwrap()]
                        .parse()
                        .unwrap_or(0);
                    let expected_node = run.cluster.map_location(pid)?;
                    let primary = f.replicas.first().map(|r| r.node);
                    if primary != Some(expected_node) {
                        ok = false;
                        details = format!("{} on {primary:?}, expected {expected_node:?}", f.name);
                        break;
                    }
                }
                check(checks, "same range lands on the same node", ok, details);
            }
        }
        "flexible-replication" => {
            let rep1 = run.plan.slot_of("replicate1").unwrap();
            let rep2 = run.plan.slot_of("replicate2").unwrap();
            let chunk_slot = run.plan.slot_of("chunker").unwrap();
            let range_slot = run.plan.slot_of("ranges").unwrap();
            let input_slot = run.plan.slot_of("input").unwrap();
            let mut hot_one_copy = 0u64;
            let mut cold_one_copy = 0u64;
            let mut hot_groups: BTreeMap<String, u64> = BTreeMap::new();
            let mut cold_groups: BTreeMap<String, u64> = BTreeMap::new();
            for f in run.cluster.list_dataset(id) {
                let values = access::file_labels(&run.plan, &f.name)?;
                let block_id = format!(
                    "{}-{}-{}",
                    values[input_slot], values[range_slot], values[chunk_slot]
                );
                if !values[rep1].is_empty() {
                    if values[rep1] == "1" {
                        hot_one_copy += f.size * f.replicas.len() as u64;
                    }
                    *hot_groups.entry(block_id).or_insert(0) += 1;
                } else if !values[rep2].is_empty() {
                    if values[rep2] == "1" {
                        cold_one_copy += f.size * f.replicas.len() as u64;
                    }
                    *cold_groups.entry(block_id).or_insert(0) += 1;
                }
            }
            let physical = run.cluster.physical_bytes(id);
            let analytic = 10 * hot_one_copy + 2 * cold_one_copy;
            check(
                checks,
                "stored bytes equal the analytic sum exactly",
                physical == analytic,
                format!("physical {physical} analytic {analytic}"),
            );
            check(
                checks,
                "hot blocks have 10 copies, cold 2",
                hot_groups.values().all(|&c| c == 10) && cold_groups.values().all(|&c| c == 2),
                format!("{} hot, {} cold blocks", hot_groups.len(), cold_groups.len()),
            );
            let uniform = 3 * (hot_one_copy + cold_one_copy);
            if 8 * hot_one_copy < hot_one_copy + cold_one_copy {
                check(
                    checks,
                    "beats uniform triple replication when hot < 1/8",
                    physical < uniform,
                    format!("flexible {physical} uniform {uniform}"),
                );
            }
        }
        "erasure" => {
            verify_erasure_family(id, run, params, checks, true)?;
        }
        "flexible-erasure" => {
            let stripes = crate::recovery::read_stripes(&run.cluster, id)?;
            let hot_ok = stripes
                .iter()
                .filter(|s| s.id.starts_with("hotStore"))
                .all(|s| s.k <= 5 && s.m == 3);
            let cold_ok = stripes
                .iter()
                .filter(|s| s.id.starts_with("coldStore"))
                .all(|s| s.k <= 10 && s.m == 3);
            let has_both = stripes.iter().any(|s| s.id.starts_with("hotStore"))
                && stripes.iter().any(|s| s.id.starts_with("coldStore"));
            check(
                checks,
                "hot ranges use (5,3), cold ranges (10,3)",
                hot_ok && cold_ok && has_both,
                format!("{} stripes", stripes.len()),
            );
            verify_erasure_family(id, run, params, checks, false)?;
        }
        "mixed-replication-erasure" => {
            let stripes = crate::recovery::read_stripes(&run.cluster, id)?;
            check(
                checks,
                "cold partitions are erasure-coded",
                !stripes.is_empty(),
                format!("{} stripes", stripes.len()),
            );
            let rep_slot = run.plan.slot_of("replicate").unwrap();
            let hot_files: Vec<String> = run
                .cluster
                .list_dataset(id)
                .into_iter()
                .filter(|f| {
                    access::file_labels(&run.plan, &f.name)
                        .map(|v| !v[rep_slot].is_empty())
                        .unwrap_or(false)
                })
                .map(|f| f.name)
                .collect();
            check(
                checks,
                "hot partition is replicated 10 ways",
                !hot_files.is_empty() && hot_files.len() % 10 == 0,
                format!("{} hot copies", hot_files.len()),
            );
            if params.nodes >= 4 {
                // Any single node loss recovers through the mixed catalog.
                let schema = schema_into_serializers(run)?;
                let victim = NodeId(1);
                run.cluster.kill_node(victim)?;
                let mut catalog = RecoveryCatalog::default();
                catalog.register(RecoverySpec {
                    dataset: id.to_string(),
                    udf: Box::new(ReplicationRecovery),
                    poll_interval: std::time::Duration::from_millis(1),
                });
                catalog.register(RecoverySpec {
                    dataset: id.to_string(),
                    udf: Box::new(TransformationRecovery::from_plan(&run.plan, schema)),
                    poll_interval: std::time::Duration::from_millis(1),
                });
                catalog.register(RecoverySpec {
                    dataset: id.to_string(),
                    udf: Box::new(ErasureRecovery),
                    poll_interval: std::time::Duration::from_millis(1),
                });
                let mut stats = RecoveryStats::default();
                for _ in 0..3 {
                    daemon_cycle(&run.cluster, &catalog, &mut stats);
                }
                let unreadable = run
                    .cluster
                    .list_dataset(id)
                    .iter()
                    .filter(|f| run.cluster.get_block(id, &f.name).is_err())
                    .count();
                check(
                    checks,
                    "single node loss recovers across both mechanisms",
                    unreadable == 0,
                    format!("{unreadable} unreadable files"),
                );
            }
        }
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    }
    Ok(())
}

fn schema_into_serializers(run: &ScenarioRun) -> Result<Arc<crate::item::Schema>, ScenarioError> {
    let flows = lang::compile::schema_into_ops(&run.plan)?;
    for (op, schema) in &flows {
        if run.plan.ops[op].builtin == "serialize" {
            if let Some(s) = schema {
                return Ok(s.clone());
            }
        }
    }
    // Fall back to the parser schema.
    let parser = run
        .plan
        .ops
        .values()
        .find(|s| s.builtin == "csv_parse")
        .and_then(|s| s.str("schema"))
        .unwrap_or(gen::LINEITEM_SCHEMA);
    Ok(Arc::new(crate::item::Schema::parse(parser).map_err(LangError::Core)?))
}

fn verify_erasure_family(
    id: &str,
    run: &ScenarioRun,
    params: &ScenarioParams,
    checks: &mut Vec<CheckResult>,
    exact_overhead: bool,
) -> Result<(), ScenarioError> {
    let stripes = crate::recovery::read_stripes(&run.cluster, id)?;
    check(
        checks,
        "stripe catalog written",
        !stripes.is_empty(),
        format!("{} stripes", stripes.len()),
    );
    let data_names: BTreeSet<String> = stripes.iter().flat_map(|s| s.data.clone()).collect();
    let parity_names: BTreeSet<String> = stripes.iter().flat_map(|s| s.parity.clone()).collect();
    let mut data_bytes = 0u64;
    let mut parity_bytes = 0u64;
    for f in run.cluster.list_dataset(id) {
        if data_names.contains(&f.name) {
            data_bytes += f.size;
        } else if parity_names.contains(&f.name) {
            parity_bytes += f.size;
        }
    }
    if exact_overhead {
        // (10,3) with equal-size full stripes: parity is exactly 30% more.
        check(
            checks,
            "stored bytes are exactly 1.3x the data bytes",
            10 * parity_bytes == 3 * data_bytes && data_bytes > 0,
            format!("data {data_bytes} parity {parity_bytes}"),
        );
    }
    if params.nodes >= 4 {
        let victim = NodeId(0);
        run.cluster.kill_node(victim)?;
        let mut catalog = RecoveryCatalog::default();
        catalog.register(RecoverySpec {
            dataset: id.to_string(),
            udf: Box::new(ErasureRecovery),
            poll_interval: std::time::Duration::from_millis(1),
        });
        let mut stats = RecoveryStats::default();
        let events = daemon_cycle(&run.cluster, &catalog, &mut stats);
        let failed_events = events.iter().filter(|e| !e.ok).count();
        let unreadable = run
            .cluster
            .list_dataset(id)
            .iter()
            .filter(|f| run.cluster.get_block(id, &f.name).is_err())
            .count();
        check(
            checks,
            "node loss recovered by stripe reconstruction",
            unreadable == 0 && failed_events == 0,
            format!(
                "{} events, {} decodes, {unreadable} unreadable",
                events.len(),
                stats.rs_decodes
            ),
        );
        check(
            checks,
            "erasure recovery decodes stripes",
            stats.rs_decodes > 0 || events.is_empty(),
            format!("{} decodes", stats.rs_decodes),
        );
    }
    Ok(())
}
