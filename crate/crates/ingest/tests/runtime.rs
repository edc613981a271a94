//! End-to-end runtime tests: plan execution over a simulated cluster,
//! pipelining vs full materialization, parallel mode, fault injection and
//! node failure rescheduling.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use ingest::cluster::{create_cluster, Cluster, NodeId};
use ingest::item::{IngestItem, Value};
use ingest::lang::{compile_to_plan, parse_program, CompileOptions, Registry};
use ingest::op::drain_operator;
use ingest::oplib::{self, ExecCtx};
use ingest::optimizer::{build_unoptimized, default_rules, optimize_plan, OptimizeCtx};
use ingest::plan::{IngestPlan, OpSpec, ParamValue};
use ingest::runtime::{
    execute_plan, retry_or_dummy, run_parallel_mode, ExecConfig, ExecutionReport, FaultSpec,
    InputBinding, KillEvent,
};
use tempfile::TempDir;

const LOG_PROGRAM: &str = r#"
s1 = SELECT * FROM input USING parser REPLICATE BY 2;
s2 = SELECT * FROM s1 REPLICATE BY 2;
s3 = FORMAT s2 CHUNK BY c100mb;
s4 = FORMAT s3 SERIALIZE AS sortedRow;
s5 = FORMAT s3 SERIALIZE AS rcFile;
s6 = FORMAT s1 PARTITION BY hash CHUNK BY c100mb SERIALIZE AS pax;
s7 = STORE s4,s5 LOCATE USING disjointLocator;
s8 = STORE s6 LOCATE USING randomLocator;
s9 = STORE s7,s8 UPLOAD TO hdfsStorage;
CREATE STAGE a USING s1;
CHAIN STAGE b TO a USING s2,s3 WHERE l_replicate1=1;
CHAIN STAGE c TO a USING s6,s8 WHERE l_replicate1=2;
CHAIN STAGE d TO b USING s4 WHERE l_replicate2=1;
CHAIN STAGE e TO b USING s5 WHERE l_replicate2=2;
CHAIN STAGE f TO d,e USING s7;
CHAIN STAGE g TO c,f USING s9;
"#;

fn log_registry() -> Registry {
    Registry::parse(
        r#"
        parser = csv_parse(delimiter="|", schema="ts:int64,machine:string,msg:string")
        c100mb = chunk_by_size(max_bytes=700)
        sortedRow = serialize(layout="sorted_row", key="ts")
        rcFile = serialize(layout="rcfile")
        hash = partition(kind="hash", key="machine", buckets=4)
        pax = serialize(layout="pax")
        disjointLocator = locate(policy="disjoint", vary="replicate2", locations=8)
        randomLocator = locate(policy="random", locations=8)
        hdfsStorage = store
        "#,
    )
    .unwrap()
}

fn log_plan() -> IngestPlan {
    let program = parse_program(LOG_PROGRAM).unwrap();
    compile_to_plan(&program, &log_registry(), &CompileOptions::default()).unwrap()
}

/// Writes `files` input files of `rows_per_file` log lines each and returns
/// one binding per node, assigned round-robin.
fn write_inputs(
    dir: &TempDir,
    nodes: usize,
    files: usize,
    rows_per_file: usize,
) -> Vec<InputBinding> {
    let mut bindings: BTreeMap<usize, Vec<(u64, PathBuf)>> = BTreeMap::new();
    for f in 0..files {
        let path = dir.path().join(format!("in-{f}.log"));
        let mut text = String::new();
        for r in 0..rows_per_file {
            let ts = (f * rows_per_file + r) as i64;
            text.push_str(&format!("{ts}|m{}|event {ts} happened\n", ts % 7));
        }
        std::fs::write(&path, text).unwrap();
        bindings
            .entry(f % nodes)
            .or_default()
            .push((f as u64, path));
    }
    bindings
        .into_iter()
        .map(|(unit, files)| InputBinding {
            unit,
            source: "input".into(),
            files,
            replicated: true,
        })
        .collect()
}

fn run(
    plan: &IngestPlan,
    cluster: Arc<Cluster>,
    bindings: &[InputBinding],
    cfg: &ExecConfig,
    optimized: bool,
) -> ExecutionReport {
    let exec = if optimized {
        optimize_plan(plan, &default_rules(), &OptimizeCtx::default()).unwrap()
    } else {
        build_unoptimized(plan)
    };
    execute_plan(&exec, bindings, cluster, cfg).unwrap()
}

#[test]
fn log_plan_stores_three_replica_families() {
    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let bindings = write_inputs(&dir, 2, 2, 40);
    let plan = log_plan();
    let cfg = ExecConfig::new("logs");
    let report = run(&plan, cluster.clone(), &bindings, &cfg, true);

    assert!(!report.manifest.is_empty());
    // Three families by serializer label in the file name slots.
    let sorted_slot = plan.slot_of("sortedRow").unwrap();
    let rc_slot = plan.slot_of("rcFile").unwrap();
    let pax_slot = plan.slot_of("pax").unwrap();
    let mut families = [0u64; 3];
    for entry in &report.manifest {
        let values = ingest::access::name::decode_name(&entry.name).unwrap();
        assert_eq!(values.len(), plan.slots.len());
        if values[sorted_slot] == "sorted_row" {
            families[0] += 1;
        } else if values[rc_slot] == "rcfile" {
            families[1] += 1;
        } else if values[pax_slot] == "pax" {
            families[2] += 1;
        } else {
            panic!("file {} belongs to no replica family", entry.name);
        }
    }
    assert!(families.iter().all(|&c| c > 0), "families {families:?}");

    // Union-all accounting: items into stage f equal the outputs of d and e.
    let sum = |stage: &str, f: fn(&ingest::runtime::StageCounter) -> u64| -> u64 {
        report
            .stage_counters
            .iter()
            .filter(|c| c.stage == stage)
            .map(f)
            .sum()
    };
    assert_eq!(
        sum("f", |c| c.items_in),
        sum("d", |c| c.items_out) + sum("e", |c| c.items_out)
    );
}

#[test]
fn zero_inputs_succeed_with_empty_manifest() {
    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let plan = log_plan();
    let cfg = ExecConfig::new("logs");
    let report = run(&plan, cluster, &[], &cfg, true);
    assert!(report.manifest.is_empty());
}

/// A hand-rolled single-threaded interpreter: drains each stage chain in
/// topological order with plain operator calls, no blocks, markers, or
/// threads. The engine's record output must match it.
#[test]
fn output_matches_reference_interpreter() {
    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let bindings = write_inputs(&dir, 2, 2, 30);
    let plan = log_plan();
    let cfg = ExecConfig::new("logs");
    let report = run(&plan, cluster.clone(), &bindings, &cfg, true);

    // Reference: separate cluster, same inputs, direct stage-by-stage drains.
    let ref_dir = TempDir::new().unwrap();
    let ref_cluster = Arc::new(create_cluster(2, &ref_dir.path().join("c"), 1, false).unwrap());
    let manifest = Arc::new(std::sync::Mutex::new(Vec::new()));
    let mut per_item = std::collections::HashSet::new();
    let mut replicate = std::collections::HashSet::new();
    let mut locate = std::collections::HashSet::new();
    let mut serialize = std::collections::HashSet::new();
    for (name, spec) in &plan.ops {
        let sig = oplib::signature(spec).unwrap();
        if sig.per_item_label {
            per_item.insert(name.clone());
        }
        match oplib::classify(spec) {
            oplib::OpClass::Replicate | oplib::OpClass::Stochastic => {
                replicate.insert(name.clone());
            }
            oplib::OpClass::Locate => {
                locate.insert(name.clone());
            }
            oplib::OpClass::Serialize => {
                serialize.insert(name.clone());
            }
            _ => {}
        }
    }
    for unit in 0..2usize {
        let ctx = ExecCtx {
            seed: 0,
            unit,
            dataset: "logs".into(),
            cluster: Some(ref_cluster.clone()),
            slots: Arc::new(plan.slots.clone()),
            per_item_ops: Arc::new(per_item.clone()),
            replicate_ops: Arc::new(replicate.clone()),
            locate_ops: Arc::new(locate.clone()),
            serialize_ops: Arc::new(serialize.clone()),
            manifest: manifest.clone(),
            dropped_labels: Arc::new(std::sync::Mutex::new(BTreeMap::new())),
        };
        let mut stage_out: BTreeMap<String, Vec<IngestItem>> = BTreeMap::new();
        for stage in &plan.stages {
            let mut items: Vec<IngestItem> = if stage.is_source() {
                bindings
                    .iter()
                    .filter(|b| b.unit == unit)
                    .flat_map(|b| {
                        b.files.iter().map(|(id, path)| {
                            IngestItem::file(std::fs::read(path).unwrap())
                                .with_label("input", id.to_string())
                                .unwrap()
                        })
                    })
                    .collect()
            } else {
                stage
                    .upstreams
                    .iter()
                    .flat_map(|u| stage_out[u].clone())
                    .filter(|item| stage.predicates.iter().all(|p| p.matches(item)))
                    .collect()
            };
            for op_name in &stage.chain {
                let mut op = oplib::instantiate(&plan.ops[op_name], &ctx).unwrap();
                items = drain_operator(op.as_mut(), items).unwrap();
            }
            stage_out.insert(stage.name.clone(), items);
        }
    }
    let mut reference: Vec<(String, String)> = manifest
        .lock()
        .unwrap()
        .iter()
        .map(|f| (f.name.clone(), format!("{:016x}", f.digest)))
        .collect();
    reference.sort();
    reference.dedup();
    let mut engine: Vec<(String, String)> = report
        .manifest
        .iter()
        .map(|m| (m.name.clone(), m.digest.clone()))
        .collect();
    engine.sort();
    assert_eq!(engine, reference);
}

#[test]
fn optimized_and_unoptimized_runs_store_identical_files() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 2, 2, 50);
    let plan = log_plan();

    let c1 = Arc::new(create_cluster(2, &dir.path().join("c1"), 1, false).unwrap());
    let r1 = run(&plan, c1, &bindings, &ExecConfig::new("logs"), true);
    let c2 = Arc::new(create_cluster(2, &dir.path().join("c2"), 1, false).unwrap());
    let r2 = run(&plan, c2, &bindings, &ExecConfig::new("logs"), false);
    assert_eq!(r1.manifest_fingerprint(), r2.manifest_fingerprint());
    assert!(!r1.manifest.is_empty());
}

#[test]
fn two_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 1, 1, 60);
    let plan = log_plan();
    let c1 = Arc::new(create_cluster(1, &dir.path().join("c1"), 1, false).unwrap());
    let r1 = run(&plan, c1, &bindings, &ExecConfig::new("logs"), true);
    let c2 = Arc::new(create_cluster(1, &dir.path().join("c2"), 1, false).unwrap());
    let r2 = run(&plan, c2, &bindings, &ExecConfig::new("logs"), true);
    assert_eq!(r1.manifest_fingerprint(), r2.manifest_fingerprint());
}

#[test]
fn pool_sizes_one_and_four_agree() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 2, 2, 50);
    let plan = log_plan();
    let mut cfg1 = ExecConfig::new("logs");
    cfg1.pool_size = 1;
    let mut cfg4 = ExecConfig::new("logs");
    cfg4.pool_size = 4;
    let c1 = Arc::new(create_cluster(2, &dir.path().join("c1"), 1, false).unwrap());
    let r1 = run(&plan, c1, &bindings, &cfg1, true);
    let c2 = Arc::new(create_cluster(2, &dir.path().join("c2"), 1, false).unwrap());
    let r2 = run(&plan, c2, &bindings, &cfg4, true);
    assert_eq!(r1.manifest_fingerprint(), r2.manifest_fingerprint());
}

#[test]
fn node_counts_one_and_three_agree() {
    let dir = TempDir::new().unwrap();
    // Same files, spread differently.
    let bindings3 = write_inputs(&dir, 3, 3, 40);
    let bindings1: Vec<InputBinding> = vec![InputBinding {
        unit: 0,
        source: "input".into(),
        files: bindings3
            .iter()
            .flat_map(|b| b.files.clone())
            .collect(),
        replicated: true,
    }];
    let plan = log_plan();
    let c1 = Arc::new(create_cluster(1, &dir.path().join("c1"), 1, false).unwrap());
    let r1 = run(&plan, c1, &bindings1, &ExecConfig::new("logs"), true);
    let c3 = Arc::new(create_cluster(3, &dir.path().join("c3"), 1, false).unwrap());
    let r3 = run(&plan, c3, &bindings3, &ExecConfig::new("logs"), true);
    assert_eq!(r1.manifest_fingerprint(), r3.manifest_fingerprint());
}

#[test]
fn operator_failing_twice_succeeds_with_two_retry_events() {
    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let bindings = write_inputs(&dir, 2, 2, 30);
    let plan = log_plan();
    let mut cfg = ExecConfig::new("logs");
    cfg.faults.push(FaultSpec {
        op: "hash".into(),
        unit: Some(0),
        times: 2,
    });
    let report = run(&plan, cluster, &bindings, &cfg, true);
    let hash_retries: Vec<_> = report
        .retries
        .iter()
        .filter(|r| r.op == "hash" && r.unit == 0)
        .collect();
    assert_eq!(hash_retries.len(), 2);
    assert!(report.dummies.is_empty());

    // Same manifest as a clean run.
    let dir2 = TempDir::new().unwrap();
    let cluster2 = Arc::new(create_cluster(2, &dir2.path().join("c"), 1, false).unwrap());
    let clean = run(&plan, cluster2, &bindings, &ExecConfig::new("logs"), true);
    assert_eq!(report.manifest_fingerprint(), clean.manifest_fingerprint());
}

#[test]
fn operator_failing_three_times_is_replaced_by_dummy() {
    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(1, &dir.path().join("c"), 1, false).unwrap());
    let bindings = write_inputs(&dir, 1, 1, 30);
    let plan = log_plan();
    let mut cfg = ExecConfig::new("logs");
    cfg.faults.push(FaultSpec {
        op: "hash".into(),
        unit: None,
        times: u32::MAX,
    });
    let report = run(&plan, cluster, &bindings, &cfg, true);
    assert_eq!(report.dummies.len(), 1);
    assert_eq!(report.dummies[0].op, "hash");
    // Ingestion completed; the pax replica files carry the skip label in
    // the hash slot.
    let hash_slot = plan.slot_of("hash").unwrap();
    let pax_slot = plan.slot_of("pax").unwrap();
    let mut saw_pax = false;
    for entry in &report.manifest {
        let values = ingest::access::name::decode_name(&entry.name).unwrap();
        if values[pax_slot] == "pax" {
            saw_pax = true;
            assert_eq!(values[hash_slot], "-1");
        }
    }
    assert!(saw_pax);
}

#[test]
fn downstream_stage_predicate_sees_skip_label() {
    // An operator rigged to always fail feeds a stage filtering on its
    // label: items labelled "-1" flow to the matching branch.
    let registry = Registry::parse(
        r#"
        parser = csv_parse(delimiter="|", schema="k:int64,v:string")
        flaky = partition(kind="hash", key="k", buckets=2)
        c1 = chunk_by_size(max_bytes=512)
        up = store
        "#,
    )
    .unwrap();
    let text = r#"
        s1 = SELECT * FROM input USING parser;
        s2 = FORMAT s1 PARTITION BY flaky;
        s3 = FORMAT s2 CHUNK BY c1;
        s4 = STORE s3 UPLOAD TO up;
        CREATE STAGE a USING s1, s2;
        CHAIN STAGE fallback TO a USING s3, s4 WHERE l_flaky = -1;
    "#;
    let program = parse_program(text).unwrap();
    let plan = compile_to_plan(&program, &registry, &CompileOptions::default()).unwrap();

    let dir = TempDir::new().unwrap();
    let cluster = Arc::new(create_cluster(1, &dir.path().join("c"), 1, false).unwrap());
    std::fs::write(dir.path().join("in.csv"), "1|a\n2|b\n3|c\n").unwrap();
    let bindings = vec![InputBinding {
        unit: 0,
        source: "input".into(),
        files: vec![(0, dir.path().join("in.csv"))],
        replicated: true,
    }];
    let mut cfg = ExecConfig::new("d");
    cfg.faults.push(FaultSpec {
        op: "flaky".into(),
        unit: None,
        times: u32::MAX,
    });
    let exec = build_unoptimized(&plan);
    let report = execute_plan(&exec, &bindings, cluster, &cfg).unwrap();
    assert_eq!(report.dummies.len(), 1);
    // All three records reached the fallback stage.
    let fallback_in: u64 = report
        .stage_counters
        .iter()
        .filter(|c| c.stage == "fallback")
        .map(|c| c.items_in)
        .sum();
    assert_eq!(fallback_in, 3);
    assert!(!report.manifest.is_empty());
}

#[test]
fn killed_node_work_moves_and_manifest_is_complete() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 3, 3, 40);
    let plan = log_plan();

    let clean_cluster = Arc::new(create_cluster(3, &dir.path().join("c0"), 1, false).unwrap());
    let clean = run(&plan, clean_cluster, &bindings, &ExecConfig::new("logs"), true);

    let cluster = Arc::new(create_cluster(3, &dir.path().join("c1"), 1, false).unwrap());
    let mut cfg = ExecConfig::new("logs");
    cfg.kills.push(KillEvent {
        node: 1,
        before_block: 2,
    });
    let report = run(&plan, cluster, &bindings, &cfg, true);
    assert_eq!(report.reschedules.len(), 1);
    assert_eq!(report.manifest_fingerprint(), clean.manifest_fingerprint());
}

#[test]
fn unreplicated_inputs_on_killed_node_are_lost() {
    let dir = TempDir::new().unwrap();
    let mut bindings = write_inputs(&dir, 2, 2, 20);
    for b in &mut bindings {
        b.replicated = false;
    }
    let plan = log_plan();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let mut cfg = ExecConfig::new("logs");
    cfg.kills.push(KillEvent {
        node: 1,
        before_block: 1,
    });
    let exec = optimize_plan(&plan, &default_rules(), &OptimizeCtx::default()).unwrap();
    let err = execute_plan(&exec, &bindings, cluster, &cfg).unwrap_err();
    assert!(matches!(err, ingest::runtime::RuntimeError::InputsLost(1)));
}

#[test]
fn kill_after_completion_has_no_effect() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 2, 2, 20);
    let plan = log_plan();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let mut cfg = ExecConfig::new("logs");
    cfg.kills.push(KillEvent {
        node: 1,
        before_block: 9999,
    });
    let report = run(&plan, cluster, &bindings, &cfg, true);
    assert!(report.reschedules.is_empty());
    assert!(!report.manifest.is_empty());
}

#[test]
fn parallel_mode_rejects_stateful_operator() {
    let spec = OpSpec::new("res", "reservoir_sample").with("capacity", ParamValue::Int(2));
    let ctx = ExecCtx::for_tests(0);
    let err = run_parallel_mode(&spec, &ctx, vec![], 4).unwrap_err();
    assert!(matches!(
        err,
        ingest::item::CoreError::BadParam { .. }
    ));
}

#[test]
fn parallel_serialization_is_byte_identical_to_serial() {
    use ingest::item::{Block, Record, Schema};
    let schema = Arc::new(Schema::parse("a:int64,b:string").unwrap());
    let items: Vec<IngestItem> = (0..8)
        .map(|i| {
            let records = (0..20)
                .map(|r| {
                    Record::new(
                        schema.clone(),
                        vec![Value::Int(i * 100 + r), Value::Str(format!("v{r}"))],
                    )
                })
                .collect();
            IngestItem::block(Block {
                schema: schema.clone(),
                records,
            })
            .with_label("file", i.to_string())
            .unwrap()
        })
        .collect();
    let spec = OpSpec::new("ser", "serialize").with("layout", ParamValue::Str("pax".into()));
    let ctx = ExecCtx::for_tests(0);
    let (serial, _) = run_parallel_mode(&spec, &ctx, items.clone(), 1).unwrap();
    let (parallel, _) = run_parallel_mode(&spec, &ctx, items, 4).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn retry_or_dummy_policy() {
    let spec = OpSpec::new("id", "identity");
    let ctx = ExecCtx::for_tests(0);
    let items: Vec<IngestItem> = (0..3).map(|i| IngestItem::file(vec![i])).collect();

    // Two failures then success.
    let (out, retries, dummied) =
        retry_or_dummy(&spec, &ctx, items.clone(), 3, 2).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(retries.len(), 2);
    assert!(!dummied);
    assert!(out.iter().all(|i| i.label("id") != Some("-1")));

    // Three failures: dummy pass-through labels everything "-1".
    let (out, retries, dummied) = retry_or_dummy(&spec, &ctx, items, 3, 3).unwrap();
    assert_eq!(retries.len(), 3);
    assert!(dummied);
    assert!(out.iter().all(|i| i.label("id") == Some("-1")));
}

#[test]
fn injecting_one_failure_into_each_operator_never_changes_the_manifest() {
    let dir = TempDir::new().unwrap();
    let bindings = write_inputs(&dir, 2, 2, 25);
    let plan = log_plan();
    let clean_cluster = Arc::new(create_cluster(2, &dir.path().join("c0"), 1, false).unwrap());
    let clean = run(&plan, clean_cluster, &bindings, &ExecConfig::new("logs"), true);
    let ops: Vec<String> = plan.ops.keys().cloned().collect();
    for (i, op) in ops.iter().enumerate() {
        let cluster =
            Arc::new(create_cluster(2, &dir.path().join(format!("c{}", i + 1)), 1, false).unwrap());
        let mut cfg = ExecConfig::new("logs");
        cfg.faults.push(FaultSpec {
            op: op.clone(),
            unit: None,
            times: 1,
        });
        let report = run(&plan, cluster, &bindings, &cfg, true);
        assert_eq!(
            report.manifest_fingerprint(),
            clean.manifest_fingerprint(),
            "manifest changed after injected failure of {op}"
        );
        assert!(!report.retries.is_empty());
    }
}

#[test]
fn shuffle_gathers_groups_and_conserves_records() {
    // Global stratified sampling forces a shuffle by stratum label.
    let registry = Registry::parse(
        r#"
        parser = csv_parse(delimiter="|", schema="k:int64,flag:string")
        strata = partition(kind="list", key="flag", values="A,B,C")
        strat = stratified_sample(rate=1.0, by="strata", scope="global")
        c1 = chunk_by_size(max_bytes=4096)
        up = store
        "#,
    )
    .unwrap();
    let text = r#"
        s1 = SELECT * FROM input USING parser;
        s2 = FORMAT s1 PARTITION BY strata;
        s3 = SELECT * FROM s2 WHERE strat;
        s4 = FORMAT s3 CHUNK BY c1;
        s5 = STORE s4 UPLOAD TO up;
    "#;
    let program = parse_program(text).unwrap();
    let plan = compile_to_plan(&program, &registry, &CompileOptions::default()).unwrap();

    let dir = TempDir::new().unwrap();
    for f in 0..2 {
        let mut text = String::new();
        for r in 0..30 {
            let flag = ["A", "B", "C"][(f * 30 + r) % 3];
            text.push_str(&format!("{}|{}\n", f * 30 + r, flag));
        }
        std::fs::write(dir.path().join(format!("in-{f}.csv")), text).unwrap();
    }
    let bindings: Vec<InputBinding> = (0..2)
        .map(|unit| InputBinding {
            unit,
            source: "input".into(),
            files: vec![(unit as u64, dir.path().join(format!("in-{unit}.csv")))],
            replicated: true,
        })
        .collect();
    let cluster = Arc::new(create_cluster(2, &dir.path().join("c"), 1, false).unwrap());
    let exec = optimize_plan(&plan, &default_rules(), &OptimizeCtx::default()).unwrap();
    let report = execute_plan(&exec, &bindings, cluster, &ExecConfig::new("d")).unwrap();
    assert!(report.shuffle_bytes > 0);
    // rate 1.0 keeps everything: 60 records survive the sampler.
    let sampled: u64 = report
        .op_counters
        .iter()
        .filter(|c| c.op == "strat")
        .map(|c| c.items_out)
        .sum();
    assert_eq!(sampled, 60);

    // Corrupt the first shuffle parts: records still conserved, repairs > 0.
    let dir2 = TempDir::new().unwrap();
    for f in 0..2 {
        std::fs::copy(
            dir.path().join(format!("in-{f}.csv")),
            dir2.path().join(format!("in-{f}.csv")),
        )
        .unwrap();
    }
    let bindings2: Vec<InputBinding> = (0..2)
        .map(|unit| InputBinding {
            unit,
            source: "input".into(),
            files: vec![(unit as u64, dir2.path().join(format!("in-{unit}.csv")))],
            replicated: true,
        })
        .collect();
    let cluster2 = Arc::new(create_cluster(2, &dir2.path().join("c"), 1, false).unwrap());
    let mut cfg = ExecConfig::new("d");
    cfg.corrupt_shuffle_parts = 2;
    let report2 = execute_plan(&exec, &bindings2, cluster2, &cfg).unwrap();
    assert!(report2.shuffle_repairs > 0);
    let sampled2: u64 = report2
        .op_counters
        .iter()
        .filter(|c| c.op == "strat")
        .map(|c| c.items_out)
        .sum();
    assert_eq!(sampled2, 60);
    assert_eq!(report.manifest_fingerprint(), report2.manifest_fingerprint());
}
