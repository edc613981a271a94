//! Every checked-in scenario runs end to end and passes its own
//! verification at modest sizes.

use ingest::scenario::{run_scenario, ScenarioParams, SCENARIO_IDS};
use tempfile::TempDir;

fn run(id: &str, rows: u64) {
    let dir = TempDir::new().unwrap();
    let mut params = ScenarioParams::default_for(id);
    params.rows = rows;
    let report = run_scenario(id, dir.path(), &params).unwrap();
    assert!(
        report.pass,
        "scenario {id} failed:\n{}",
        serde_json::to_string_pretty(&report.checks).unwrap()
    );
}

#[test]
fn dc_check_scenario() {
    run("dc-check", 8_000);
}

#[test]
fn fd_check_scenario() {
    run("fd-check", 8_000);
}

#[test]
fn dc_repair_scenario() {
    run("dc-repair", 8_000);
}

#[test]
fn bernoulli_scenario() {
    run("bernoulli", 20_000);
}

#[test]
fn reservoir_scenario() {
    run("reservoir", 3_000);
}

#[test]
fn stratified_local_scenario() {
    run("stratified-local", 6_000);
}

#[test]
fn stratified_global_scenario() {
    run("stratified-global", 6_000);
}

#[test]
fn per_replica_layouts_scenario() {
    run("per-replica-layouts", 2_000);
}

#[test]
fn hybrid_replicas_scenario() {
    run("hybrid-replicas", 2_000);
}

#[test]
fn content_partition_scenario() {
    run("content-partition", 3_000);
}

#[test]
fn content_placement_scenario() {
    run("content-placement", 3_000);
}

#[test]
fn flexible_replication_scenario() {
    run("flexible-replication", 3_000);
}

#[test]
fn erasure_scenario() {
    run("erasure", 2_000);
}

#[test]
fn flexible_erasure_scenario() {
    run("flexible-erasure", 2_000);
}

#[test]
fn mixed_replication_erasure_scenario() {
    run("mixed-replication-erasure", 2_000);
}

#[test]
fn all_ids_are_runnable() {
    for id in SCENARIO_IDS {
        assert!(
            ingest::scenario::program_text(id).is_some(),
            "{id} has no checked-in program"
        );
    }
}

/// Same seed and params give identical pass results and stored manifests.
#[test]
fn scenarios_are_reproducible() {
    let d1 = TempDir::new().unwrap();
    let d2 = TempDir::new().unwrap();
    let mut params = ScenarioParams::default_for("bernoulli");
    params.rows = 5_000;
    params.seed = 99;
    let r1 = run_scenario("bernoulli", d1.path(), &params).unwrap();
    let r2 = run_scenario("bernoulli", d2.path(), &params).unwrap();
    assert_eq!(r1.pass, r2.pass);
    assert_eq!(r1.manifest_fingerprint, r2.manifest_fingerprint);
}
