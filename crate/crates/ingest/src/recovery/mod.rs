//! Post-ingestion fault tolerance: a catalog of detect/recover UDFs per
//! ingested dataset, three shipped recovery mechanisms (replication-,
//! transformation- and erasure-coding-based) and a polling daemon.

pub mod gf256;
pub mod rs;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, ClusterError};
use crate::item::Schema;
use crate::layout::{decode_block, encode_block, EncodeOptions, IoStats, LayoutId, LayoutError};
use crate::plan::IngestPlan;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("unknown plan {0}")]
    UnknownPlan(String),
    #[error("no healthy replica of {0}")]
    NoHealthyReplica(String),
    #[error("unsupported layout for {file}: {reason}")]
    UnsupportedLayout { file: String, reason: String },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Codec(#[from] rs::RsError),
    #[error("layout error on {file}: {source}")]
    Layout {
        file: String,
        source: LayoutError,
    },
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt stripe catalog line: {0}")]
    CorruptCatalog(String),
}

/// Erasure-coding group: k data blocks plus m parity blocks, zero-padded to
/// a common length. True (unpadded) lengths are kept per data block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripeDescriptor {
    pub id: String,
    pub k: usize,
    pub m: usize,
    pub padded_len: usize,
    pub data: Vec<String>,
    pub parity: Vec<String>,
    pub true_lens: Vec<usize>,
}

fn catalog_path(cluster: &Cluster, dataset: &str) -> std::path::PathBuf {
    cluster.dfs_dir().join("stripes").join(format!("{dataset}.catalog"))
}

pub fn append_stripe(
    cluster: &Cluster,
    dataset: &str,
    stripe: &StripeDescriptor,
) -> Result<(), RecoveryError> {
    let path = catalog_path(cluster, dataset);
    std::fs::create_dir_all(path.parent().unwrap())?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let line = format!(
        "STRIPE|{}|{}|{}|{}|data:{}|parity:{}|lens:{}\n",
        stripe.id,
        stripe.k,
        stripe.m,
        stripe.padded_len,
        stripe.data.join(","),
        stripe.parity.join(","),
        stripe
            .true_lens
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_stripes(cluster: &Cluster, dataset: &str) -> Result<Vec<StripeDescriptor>, RecoveryError> {
    let path = catalog_path(cluster, dataset);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 8 || fields[0] != "STRIPE" {
            return Err(RecoveryError::CorruptCatalog(line.to_string()));
        }
        let strip = |s: &str, prefix: &str| -> Result<Vec<String>, RecoveryError> {
            let body = s
                .strip_prefix(prefix)
                .ok_or_else(|| RecoveryError::CorruptCatalog(line.to_string()))?;
            Ok(if body.is_empty() {
                Vec::new()
            } else {
                body.split(',').map(str::to_string).collect()
            })
        };
        out.push(StripeDescriptor {
            id: fields[1].to_string(),
            k: fields[2]
                .parse()
                .map_err(|_| RecoveryError::CorruptCatalog(line.to_string()))?,
            m: fields[3]
                .parse()
                .map_err(|_| RecoveryError::CorruptCatalog(line.to_string()))?,
            padded_len: fields[4]
                .parse()
                .map_err(|_| RecoveryError::CorruptCatalog(line.to_string()))?,
            data: strip(fields[5], "data:")?,
            parity: strip(fields[6], "parity:")?,
            true_lens: strip(fields[7], "lens:")?
                .iter()
                .map(|s| s.parse().map_err(|_| RecoveryError::CorruptCatalog(line.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        });
    }
    Ok(out)
}

/// Codec-call accounting; replication recovery must finish with all
/// decode counters at zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub files_recovered: u64,
    pub bytes_copied: u64,
    pub blocks_decoded: u64,
    pub blocks_reencoded: u64,
    pub rs_decodes: u64,
}

impl RecoveryStats {
    pub fn merge(&mut self, other: &RecoveryStats) {
        self.files_recovered += other.files_recovered;
        self.bytes_copied += other.bytes_copied;
        self.blocks_decoded += other.blocks_decoded;
        self.blocks_reencoded += other.blocks_reencoded;
        self.rs_decodes += other.rs_decodes;
    }
}

/// One failed block and the blocks that can rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub file: String,
    pub recovery_set: Vec<String>,
}

/// The detect/recover UDF pair: which blocks repair a failure, and how.
pub trait RecoveryUdf: Send + Sync {
    fn mechanism(&self) -> &'static str;

    /// Polls cluster health for this dataset and pairs every failed block
    /// with its recovery set.
    fn detect(&self, cluster: &Cluster, dataset: &str) -> Result<Vec<Failure>, RecoveryError>;

    fn recover(
        &self,
        cluster: &Cluster,
        dataset: &str,
        failure: &Failure,
        stats: &mut RecoveryStats,
    ) -> Result<(), RecoveryError>;
}

/// Files with at least one unhealthy replica (bitwise-identical copies).
fn degraded_files(cluster: &Cluster, dataset: &str) -> Vec<crate::cluster::StoredFile> {
    cluster
        .list_dataset(dataset)
        .into_iter()
        .filter(|f| {
            let alive_ok = f
                .replicas
                .iter()
                .filter(|r| {
                    r.health == crate::cluster::ReplicaHealth::Ok && cluster.is_alive(r.node)
                })
                .count();
            alive_ok < f.replicas.len()
        })
        .collect()
}

/// Replication-based recovery: copy a healthy bitwise-identical replica,
/// raising the replication factor back to its previous value. No decoding.
pub struct ReplicationRecovery;

impl RecoveryUdf for ReplicationRecovery {
    fn mechanism(&self) -> &'static str {
        "replication"
    }

    fn detect(&self, cluster: &Cluster, dataset: &str) -> Result<Vec<Failure>, RecoveryError> {
        Ok(degraded_files(cluster, dataset)
            .into_iter()
            .filter(|f| f.healthy_replicas() >= 1)
            .map(|f| Failure {
                file: f.name.clone(),
                recovery_set: vec![f.name.clone()],
            })
            .collect())
    }

    fn recover(
        &self,
        cluster: &Cluster,
        dataset: &str,
        failure: &Failure,
        stats: &mut RecoveryStats,
    ) -> Result<(), RecoveryError> {
        let meta = cluster
            .file_meta(dataset, &failure.file)
            .ok_or_else(|| ClusterError::UnknownFile(failure.file.clone()))?;
        if meta.healthy_replicas() == 0 {
            return Err(RecoveryError::NoHealthyReplica(failure.file.clone()));
        }
        let desired = meta.replicas.len();
        let restored = cluster.set_replication(dataset, &failure.file, desired)?;
        stats.files_recovered += 1;
        stats.bytes_copied += restored.size * (desired as u64 - meta.healthy_replicas() as u64);
        Ok(())
    }
}

/// Transformation-based recovery for replicas that are serialized
/// differently: deserialize a surviving sibling, re-serialize into the
/// failed block's layout and store it back under the failed name.
pub struct TransformationRecovery {
    /// Canonical slot order of the plan (filename layout).
    pub slots: Vec<String>,
    /// Slot indexes occupied by serializer operators.
    pub serialize_slots: Vec<usize>,
    /// Slot indexes of replicators: replicas may differ in these labels
    /// while carrying the same records.
    pub replica_slots: Vec<usize>,
    /// Encode options per layout name (sort keys, groupings).
    pub encode_opts: BTreeMap<String, EncodeOptions>,
    /// Record schema flowing into the serializers.
    pub schema: Arc<Schema>,
}

impl TransformationRecovery {
    pub fn from_plan(plan: &IngestPlan, schema: Arc<Schema>) -> Self {
        let mut serialize_slots = Vec::new();
        let mut replica_slots = Vec::new();
        let mut encode_opts = BTreeMap::new();
        for (idx, slot) in plan.slots.iter().enumerate() {
            if let Some(spec) = plan.op(slot) {
                if matches!(
                    crate::oplib::classify(spec),
                    crate::oplib::OpClass::Replicate | crate::oplib::OpClass::Stochastic
                ) {
                    replica_slots.push(idx);
                }
                if spec.builtin == "serialize" {
                    serialize_slots.push(idx);
                    let layout = spec.str("layout").unwrap_or_default().to_string();
                    let col_groups = spec.str("groups").map(|raw| {
                        raw.split(';')
                            .map(|g| {
                                g.split(',')
                                    .map(|s| s.trim().to_string())
                                    .filter(|s| !s.is_empty())
                                    .collect::<Vec<_>>()
                            })
                            .filter(|g| !g.is_empty())
                            .collect::<Vec<_>>()
                    });
                    encode_opts.insert(
                        layout,
                        EncodeOptions {
                            sort_key: spec.str("key").map(str::to_string),
                            row_groups: spec.int("row_groups").map(|v| v.max(1) as usize),
                            col_groups,
                        },
                    );
                }
            }
        }
        TransformationRecovery {
            slots: plan.slots.clone(),
            serialize_slots,
            replica_slots,
            encode_opts,
            schema,
        }
    }

    /// Layout recorded in the filename's serializer slots, if any.
    fn layout_of(&self, name: &str) -> Option<(LayoutId, String)> {
        let values = crate::access::name::decode_name(name).ok()?;
        for &idx in &self.serialize_slots {
            if let Some(v) = values.get(idx) {
                if !v.is_empty() {
                    return LayoutId::parse_name(v).map(|l| (l, v.clone()));
                }
            }
        }
        None
    }

    /// Siblings: same lineage except the serializer and replica-id slots.
    fn is_sibling(&self, a: &str, b: &str) -> bool {
        let (Ok(va), Ok(vb)) = (
            crate::access::name::decode_name(a),
            crate::access::name::decode_name(b),
        ) else {
            return false;
        };
        if va.len() != vb.len() || a == b {
            return false;
        }
        va.iter().zip(&vb).enumerate().all(|(idx, (x, y))| {
            self.serialize_slots.contains(&idx) || self.replica_slots.contains(&idx) || x == y
        })
    }
}

impl RecoveryUdf for TransformationRecovery {
    fn mechanism(&self) -> &'static str {
        "transformation"
    }

    fn detect(&self, cluster: &Cluster, dataset: &str) -> Result<Vec<Failure>, RecoveryError> {
        let all = cluster.list_dataset(dataset);
        let mut failures = Vec::new();
        for f in degraded_files(cluster, dataset) {
            let siblings: Vec<String> = all
                .iter()
                .filter(|other| {
                    other.healthy_replicas() >= 1 && self.is_sibling(&f.name, &other.name)
                })
                .map(|other| other.name.clone())
                .collect();
            if !siblings.is_empty() {
                failures.push(Failure {
                    file: f.name.clone(),
                    recovery_set: siblings,
                });
            }
        }
        Ok(failures)
    }

    fn recover(
        &self,
        cluster: &Cluster,
        dataset: &str,
        failure: &Failure,
        stats: &mut RecoveryStats,
    ) -> Result<(), RecoveryError> {
        let meta = cluster
            .file_meta(dataset, &failure.file)
            .ok_or_else(|| ClusterError::UnknownFile(failure.file.clone()))?;
        let (target_layout, layout_name) =
            self.layout_of(&failure.file)
                .ok_or_else(|| RecoveryError::UnsupportedLayout {
                    file: failure.file.clone(),
                    reason: "no serializer label in filename".into(),
                })?;
        // Prefer a byte-identical sibling layout when one shares the layout
        // name; otherwise transcode.
        let mut source = None;
        for sibling in &failure.recovery_set {
            if let Ok(bytes) = cluster.get_block(dataset, sibling) {
                source = Some((sibling.clone(), bytes));
                break;
            }
        }
        let Some((source_name, source_bytes)) = source else {
            return Err(RecoveryError::NoHealthyReplica(failure.file.clone()));
        };
        // A sibling in the same layout is byte-identical (same records,
        // deterministic serializer): plain copy, no decoding.
        let source_layout = self.layout_of(&source_name);
        let rebuilt = if source_layout.as_ref().map(|(l, _)| *l) == Some(target_layout) {
            source_bytes
        } else {
            let mut io = IoStats::default();
            let records = decode_block(&source_bytes, &self.schema, None, None, &mut io)
                .map_err(|e| RecoveryError::Layout {
                    file: source_name.clone(),
                    source: e,
                })?;
            stats.blocks_decoded += 1;
            let opts = self
                .encode_opts
                .get(&layout_name)
                .cloned()
                .unwrap_or_default();
            let block = crate::item::Block {
                schema: self.schema.clone(),
                records,
            };
            stats.blocks_reencoded += 1;
            encode_block(&block, target_layout, &opts).map_err(|e| RecoveryError::Layout {
                file: failure.file.clone(),
                source: e,
            })?
        };
        cluster.put_block(
            dataset,
            &failure.file,
            &rebuilt,
            meta.replicas.len().max(1),
            None,
        )?;
        stats.files_recovered += 1;
        stats.bytes_copied += rebuilt.len() as u64;
        Ok(())
    }
}

/// Erasure-coding-based recovery: fetch the surviving stripe members,
/// reconstruct the missing blocks and store them back.
pub struct ErasureRecovery;

impl ErasureRecovery {
    fn stripe_failures(
        cluster: &Cluster,
        dataset: &str,
    ) -> Result<Vec<(StripeDescriptor, Vec<String>)>, RecoveryError> {
        let stripes = read_stripes(cluster, dataset)?;
        let mut out = Vec::new();
        for stripe in stripes {
            let mut failed = Vec::new();
            for name in stripe.data.iter().chain(&stripe.parity) {
                let healthy = cluster
                    .file_meta(dataset, name)
                    .map(|f| {
                        f.replicas.iter().any(|r| {
                            r.health == crate::cluster::ReplicaHealth::Ok
                                && cluster.is_alive(r.node)
                        })
                    })
                    .unwrap_or(false);
                if !healthy {
                    failed.push(name.clone());
                }
            }
            if !failed.is_empty() {
                out.push((stripe, failed));
            }
        }
        Ok(out)
    }
}

impl RecoveryUdf for ErasureRecovery {
    fn mechanism(&self) -> &'static str {
        "erasure"
    }

    fn detect(&self, cluster: &Cluster, dataset: &str) -> Result<Vec<Failure>, RecoveryError> {
        let mut failures = Vec::new();
        for (stripe, failed) in Self::stripe_failures(cluster, dataset)? {
            let members: Vec<String> = stripe.data.iter().chain(&stripe.parity).cloned().collect();
            for f in failed {
                let survivors: Vec<String> = members
                    .iter()
                    .filter(|m| {
                        **m != f
                            && cluster
                                .file_meta(dataset, m)
                                .map(|meta| meta.healthy_replicas() >= 1)
                                .unwrap_or(false)
                    })
                    .cloned()
                    .collect();
                failures.push(Failure {
                    file: f,
                    recovery_set: survivors,
                });
            }
        }
        Ok(failures)
    }

    fn recover(
        &self,
        cluster: &Cluster,
        dataset: &str,
        failure: &Failure,
        stats: &mut RecoveryStats,
    ) -> Result<(), RecoveryError> {
        let stripes = read_stripes(cluster, dataset)?;
        let stripe = stripes
            .iter()
            .find(|s| s.data.contains(&failure.file) || s.parity.contains(&failure.file))
            .ok_or_else(|| RecoveryError::UnknownPlan(failure.file.clone()))?;
        let members: Vec<String> = stripe.data.iter().chain(&stripe.parity).cloned().collect();
        let mut available = Vec::new();
        for (idx, name) in members.iter().enumerate() {
            if let Ok(mut bytes) = cluster.get_block(dataset, name) {
                bytes.resize(stripe.padded_len, 0);
                available.push((idx, bytes));
            }
        }
        let rebuilt = rs::rs_decode(stripe.k, stripe.m, &available)?;
        stats.rs_decodes += 1;
        for (idx, name) in members.iter().enumerate() {
            if name != &failure.file {
                continue;
            }
            let mut bytes = rebuilt[idx].clone();
            if idx < stripe.k {
                bytes.truncate(stripe.true_lens[idx]);
            }
            cluster.put_block(dataset, name, &bytes, 1, None)?;
            stats.files_recovered += 1;
            stats.bytes_copied += bytes.len() as u64;
        }
        Ok(())
    }
}

/// A registered detect/recover pair for one ingested dataset.
pub struct RecoverySpec {
    pub dataset: String,
    pub udf: Box<dyn RecoveryUdf>,
    pub poll_interval: Duration,
}

/// Catalog of detect/recover UDFs, keyed by dataset (plan id).
#[derive(Default)]
pub struct RecoveryCatalog {
    pub specs: Vec<RecoverySpec>,
}

impl RecoveryCatalog {
    pub fn register(&mut self, spec: RecoverySpec) {
        self.specs.push(spec);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub dataset: String,
    pub mechanism: String,
    pub file: String,
    pub ok: bool,
    pub error: Option<String>,
}

/// One poll cycle: detect failures for every cataloged dataset and invoke
/// the registered recover UDF for each. Errors are logged, never fatal.
pub fn daemon_cycle(
    cluster: &Cluster,
    catalog: &RecoveryCatalog,
    stats: &mut RecoveryStats,
) -> Vec<RecoveryEvent> {
    let mut events = Vec::new();
    for spec in &catalog.specs {
        let failures = match spec.udf.detect(cluster, &spec.dataset) {
            Ok(f) => f,
            Err(e) => {
                events.push(RecoveryEvent {
                    dataset: spec.dataset.clone(),
                    mechanism: spec.udf.mechanism().into(),
                    file: String::new(),
                    ok: false,
                    error: Some(format!("detect failed: {e}")),
                });
                continue;
            }
        };
        for failure in failures {
            let result = spec.udf.recover(cluster, &spec.dataset, &failure, stats);
            events.push(RecoveryEvent {
                dataset: spec.dataset.clone(),
                mechanism: spec.udf.mechanism().into(),
                file: failure.file.clone(),
                ok: result.is_ok(),
                error: result.err().map(|e| e.to_string()),
            });
        }
    }
    events
}

/// Polls until the stop flag is raised; each cycle runs detect + recover
/// for every cataloged dataset. Re-detection after recovery finds nothing,
/// so cycles are idempotent.
pub fn daemon_run(
    cluster: &Cluster,
    catalog: &RecoveryCatalog,
    interval: Duration,
    stop: &AtomicBool,
    stats: &mut RecoveryStats,
) -> Vec<RecoveryEvent> {
    let mut events = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        events.extend(daemon_cycle(cluster, catalog, stats));
        let mut slept = Duration::ZERO;
        let step = Duration::from_millis(5);
        while slept < interval {
            if stop.load(Ordering::Relaxed) {
                return events;
            }
            std::thread::sleep(step);
            slept += step;
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::create_cluster;
    use tempfile::TempDir;

    fn cluster(n: usize) -> (TempDir, Cluster) {
        let dir = TempDir::new().unwrap();
        let c = create_cluster(n, &dir.path().join("c"), 3, false).unwrap();
        (dir, c)
    }

    #[test]
    fn stripe_catalog_round_trips() {
        let (_dir, c) = cluster(2);
        let stripe = StripeDescriptor {
            id: "up-0".into(),
            k: 2,
            m: 1,
            padded_len: 10,
            data: vec!["a_b".into(), "c_d".into()],
            parity: vec!["up-0.p0".into()],
            true_lens: vec![10, 7],
        };
        append_stripe(&c, "d", &stripe).unwrap();
        let back = read_stripes(&c, "d").unwrap();
        assert_eq!(back, vec![stripe]);
        assert!(read_stripes(&c, "missing").unwrap().is_empty());
    }

    #[test]
    fn healthy_cluster_detects_nothing() {
        let (_dir, c) = cluster(3);
        c.put_block("d", "f", b"abc", 3, None).unwrap();
        let udf = ReplicationRecovery;
        assert!(udf.detect(&c, "d").unwrap().is_empty());
    }

    #[test]
    fn replication_recovery_restores_factor_without_decoding() {
        let (_dir, c) = cluster(4);
        let f = c.put_block("d", "f", b"payload", 3, Some(0)).unwrap();
        c.corrupt_block("d", "f", 0).unwrap();
        let _ = c.get_block("d", "f").unwrap();

        let udf = ReplicationRecovery;
        let failures = udf.detect(&c, "d").unwrap();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].recovery_set, vec!["f".to_string()]);

        let mut stats = RecoveryStats::default();
        udf.recover(&c, "d", &failures[0], &mut stats).unwrap();
        let meta = c.file_meta("d", "f").unwrap();
        assert_eq!(meta.healthy_replicas(), 3);
        assert_eq!(meta.digest, f.digest);
        assert_eq!(stats.blocks_decoded, 0);
        assert_eq!(stats.rs_decodes, 0);
        assert!(stats.bytes_copied > 0);
        // Idempotent: nothing left to detect.
        assert!(udf.detect(&c, "d").unwrap().is_empty());
    }

    #[test]
    fn erasure_recovery_rebuilds_missing_members() {
        let (_dir, c) = cluster(6);
        let blocks: Vec<Vec<u8>> = (0..5u8).map(|i| vec![i; 100 + i as usize]).collect();
        let padded: Vec<Vec<u8>> = blocks
            .iter()
            .map(|b| {
                let mut v = b.clone();
                v.resize(104, 0);
                v
            })
            .collect();
        let parity = rs::rs_encode(&padded, 3).unwrap();
        let mut names = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            let name = format!("blk{i}");
            c.put_block("d", &name, b, 1, Some(i as u64)).unwrap();
            names.push(name);
        }
        let mut parity_names = Vec::new();
        for (i, p) in parity.iter().enumerate() {
            let name = format!("s0.p{i}");
            c.put_block("d", &name, p, 1, Some((5 + i) as u64)).unwrap();
            parity_names.push(name);
        }
        append_stripe(
            &c,
            "d",
            &StripeDescriptor {
                id: "s0".into(),
                k: 5,
                m: 3,
                padded_len: 104,
                data: names.clone(),
                parity: parity_names,
                true_lens: blocks.iter().map(Vec::len).collect(),
            },
        )
        .unwrap();

        // Kill the node holding blk2's only replica.
        let victim = c.file_meta("d", "blk2").unwrap().replicas[0].node;
        c.kill_node(victim).unwrap();

        let udf = ErasureRecovery;
        let failures = udf.detect(&c, "d").unwrap();
        assert!(!failures.is_empty());
        let mut stats = RecoveryStats::default();
        for f in &failures {
            udf.recover(&c, "d", f, &mut stats).unwrap();
        }
        assert!(stats.rs_decodes >= 1);
        assert_eq!(c.get_block("d", "blk2").unwrap(), blocks[2]);
        assert!(udf.detect(&c, "d").unwrap().is_empty());
    }

    #[test]
    fn daemon_cycle_recovers_and_is_idempotent() {
        let (_dir, c) = cluster(4);
        c.put_block("d", "f", b"zzz", 3, Some(0)).unwrap();
        c.corrupt_block("d", "f", 1).unwrap();
        let _ = c.get_block("d", "f");
        let mut catalog = RecoveryCatalog::default();
        catalog.register(RecoverySpec {
            dataset: "d".into(),
            udf: Box::new(ReplicationRecovery),
            poll_interval: Duration::from_millis(1),
        });
        let mut stats = RecoveryStats::default();
        let events = daemon_cycle(&c, &catalog, &mut stats);
        assert_eq!(events.len(), 1);
        assert!(events[0].ok);
        let again = daemon_cycle(&c, &catalog, &mut stats);
        assert!(again.is_empty());
    }
}
