//! Simulated multi-node block store: per-node directories, a shared DFS
//! area for shuffles and plans, replica placement with a metadata journal,
//! and failure injection.
//!
//! Directory layout under the cluster root:
//!   slaves            one node name per line, round-robin order
//!   node-<i>/<dataset>/<file>
//!   node-<i>/tmp/     node-local spill area (lost when the node dies)
//!   dfs/              shared area: shuffles, persisted plans, stripe catalogs
//!   meta.journal      line-delimited placement journal

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item::fnv64;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("cluster root {0} already exists (use force to recreate)")]
    RootExists(PathBuf),
    #[error("cluster unavailable: {0}")]
    ClusterUnavailable(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown file {0}")]
    UnknownFile(String),
    #[error("unknown replica {file}#{replica}")]
    UnknownReplica { file: String, replica: usize },
    #[error("all replicas of {0} failed")]
    AllReplicasFailed(String),
    #[error("not enough alive nodes: wanted {wanted}, placed {placed}")]
    NotEnoughNodes { wanted: usize, placed: usize },
    #[error("invalid filename {0}")]
    BadFilename(String),
    #[error("corrupt journal line {0}: {1}")]
    CorruptJournal(usize, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn name(self) -> String {
        format!("node-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplicaHealth {
    Ok,
    Missing,
    Corrupt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replica {
    pub node: NodeId,
    pub health: ReplicaHealth,
}

/// Metadata for one stored file (all replicas of one name).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredFile {
    pub dataset: String,
    pub name: String,
    pub size: u64,
    pub digest: u64,
    pub replicas: Vec<Replica>,
    /// Requested replication could not be met (pigeonhole on alive nodes).
    pub degraded: bool,
}

impl StoredFile {
    pub fn key(&self) -> String {
        format!("{}/{}", self.dataset, self.name)
    }

    pub fn healthy_replicas(&self) -> usize {
        self.replicas
            .iter()
            .filter(|r| r.health == ReplicaHealth::Ok)
            .count()
    }
}

#[derive(Debug, Default)]
struct Meta {
    files: BTreeMap<String, StoredFile>,
    alive: Vec<bool>,
    round_robin: usize,
}

/// Simulated cluster handle. Mutations serialize through one metadata lock;
/// the journal is flushed per mutation.
pub struct Cluster {
    pub root: PathBuf,
    nodes: Vec<NodeId>,
    pub default_replication: usize,
    meta: Mutex<Meta>,
    journal: Mutex<fs::File>,
    /// Optional explicit location-id -> node overrides.
    location_map: Mutex<BTreeMap<u64, NodeId>>,
}

pub fn create_cluster(
    n_nodes: usize,
    root: &Path,
    default_replication: usize,
    force: bool,
) -> Result<Cluster, ClusterError> {
    assert!(n_nodes >= 1, "cluster needs at least one node");
    if root.exists() && root.join("slaves").exists() {
        if !force {
            return Err(ClusterError::RootExists(root.to_path_buf()));
        }
        fs::remove_dir_all(root)?;
    }
    fs::create_dir_all(root.join("dfs"))?;
    let mut slaves = String::new();
    for i in 0..n_nodes {
        let node = NodeId(i);
        fs::create_dir_all(root.join(node.name()))?;
        fs::create_dir_all(root.join(node.name()).join("tmp"))?;
        slaves.push_str(&node.name());
        slaves.push('\n');
    }
    fs::write(root.join("slaves"), slaves)?;
    fs::write(root.join("meta.journal"), "")?;
    open_cluster(root, default_replication)
}

pub fn open_cluster(root: &Path, default_replication: usize) -> Result<Cluster, ClusterError> {
    let slaves = fs::read_to_string(root.join("slaves"))?;
    let nodes: Vec<NodeId> = slaves
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, _)| NodeId(i))
        .collect();
    let mut meta = Meta {
        files: BTreeMap::new(),
        alive: vec![true; nodes.len()],
        round_robin: 0,
    };
    replay_journal(&fs::read_to_string(root.join("meta.journal"))?, &mut meta)?;
    let journal = fs::OpenOptions::new()
        .append(true)
        .open(root.join("meta.journal"))?;
    Ok(Cluster {
        root: root.to_path_buf(),
        nodes,
        default_replication,
        meta: Mutex::new(meta),
        journal: Mutex::new(journal),
        location_map: Mutex::new(BTreeMap::new()),
    })
}

fn replay_journal(text: &str, meta: &mut Meta) -> Result<(), ClusterError> {
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        let bad = |why: &str| ClusterError::CorruptJournal(idx + 1, why.to_string());
        match fields[0] {
            "PUT" => {
                if fields.len() != 5 {
                    return Err(bad("PUT arity"));
                }
                let key = fields[1].to_string();
                let (dataset, name) = key
                    .split_once('/')
                    .ok_or_else(|| bad("PUT key missing dataset"))?;
                let size: u64 = fields[2].parse().map_err(|_| bad("PUT size"))?;
                let digest =
                    u64::from_str_radix(fields[3], 16).map_err(|_| bad("PUT digest"))?;
                let replicas = parse_nodes(fields[4]).ok_or_else(|| bad("PUT nodes"))?;
                meta.files.insert(
                    key.clone(),
                    StoredFile {
                        dataset: dataset.to_string(),
                        name: name.to_string(),
                        size,
                        digest,
                        replicas: replicas
                            .into_iter()
                            .map(|node| Replica {
                                node,
                                health: ReplicaHealth::Ok,
                            })
                            .collect(),
                        degraded: false,
                    },
                );
            }
            "REPL" => {
                if fields.len() != 3 {
                    return Err(bad("REPL arity"));
                }
                let key = fields[1];
                let replicas = parse_nodes(fields[2]).ok_or_else(|| bad("REPL nodes"))?;
                if let Some(f) = meta.files.get_mut(key) {
                    f.replicas = replicas
                        .into_iter()
                        .map(|node| Replica {
                            node,
                            health: ReplicaHealth::Ok,
                        })
                        .collect();
                }
            }
            "KILL" => {
                if fields.len() != 2 {
                    return Err(bad("KILL arity"));
                }
                let n: usize = fields[1].parse().map_err(|_| bad("KILL node"))?;
                if n < meta.alive.len() {
                    meta.alive[n] = false;
                    mark_node_missing(meta, NodeId(n));
                }
            }
            "CORRUPT" => {
                if fields.len() != 3 {
                    return Err(bad("CORRUPT arity"));
                }
                let key = fields[1];
                let replica: usize = fields[2].parse().map_err(|_| bad("CORRUPT idx"))?;
                if let Some(f) = meta.files.get_mut(key) {
                    if let Some(r) = f.replicas.get_mut(replica) {
                        r.health = ReplicaHealth::Corrupt;
                    }
                }
            }
            other => return Err(bad(&format!("unknown record {other}"))),
        }
    }
    Ok(())
}

fn parse_nodes(text: &str) -> Option<Vec<NodeId>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(',')
        .map(|t| t.parse::<usize>().ok().map(NodeId))
        .collect()
}

fn mark_node_missing(meta: &mut Meta, node: NodeId) {
    for f in meta.files.values_mut() {
        for r in &mut f.replicas {
            if r.node == node {
                r.health = ReplicaHealth::Missing;
            }
        }
    }
}

impl Cluster {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn alive_nodes(&self) -> Vec<NodeId> {
        let meta = self.meta.lock().unwrap();
        self.nodes
            .iter()
            .copied()
            .filter(|n| meta.alive[n.0])
            .collect()
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.meta.lock().unwrap().alive.get(node.0).copied().unwrap_or(false)
    }

    pub fn dfs_dir(&self) -> PathBuf {
        self.root.join("dfs")
    }

    pub fn node_tmp_dir(&self, node: NodeId) -> PathBuf {
        self.root.join(node.name()).join("tmp")
    }

    pub fn set_location_map(&self, map: BTreeMap<u64, NodeId>) {
        *self.location_map.lock().unwrap() = map;
    }

    fn data_path(&self, node: NodeId, dataset: &str, name: &str) -> PathBuf {
        self.root.join(node.name()).join(dataset).join(name)
    }

    fn append_journal(&self, line: &str) -> Result<(), ClusterError> {
        let mut j = self.journal.lock().unwrap();
        writeln!(j, "{line}")?;
        j.flush()?;
        Ok(())
    }

    /// Maps a logical location id to a node: `nodes[id mod n]` over the
    /// slaves order; if that node is dead, the next alive node in sequence.
    /// Explicit map entries override.
    pub fn map_location(&self, location_id: u64) -> Result<NodeId, ClusterError> {
        if let Some(node) = self.location_map.lock().unwrap().get(&location_id) {
            return Ok(*node);
        }
        let meta = self.meta.lock().unwrap();
        let n = self.nodes.len();
        let start = (location_id % n as u64) as usize;
        for step in 0..n {
            let idx = (start + step) % n;
            if meta.alive[idx] {
                return Ok(NodeId(idx));
            }
        }
        Err(ClusterError::ClusterUnavailable("no alive nodes".into()))
    }

    /// Stores a file: primary replica on the mapped location (or round-robin
    /// when no location id is given), remaining replicas on distinct
    /// subsequent alive nodes. Re-putting an identical payload under the same
    /// name is idempotent.
    pub fn put_block(
        &self,
        dataset: &str,
        name: &str,
        bytes: &[u8],
        replication: usize,
        location_id: Option<u64>,
    ) -> Result<StoredFile, ClusterError> {
        if name.is_empty() || name.contains('/') || name.contains('\0') {
            return Err(ClusterError::BadFilename(name.to_string()));
        }
        let replication = replication.max(1);
        let digest = fnv64(bytes);
        let primary = match location_id {
            Some(id) => self.map_location(id)?,
            None => {
                let mut meta = self.meta.lock().unwrap();
                let n = self.nodes.len();
                let mut idx = meta.round_robin;
                let mut chosen = None;
                for _ in 0..n {
                    if meta.alive[idx % n] {
                        chosen = Some(NodeId(idx % n));
                        break;
                    }
                    idx += 1;
                }
                meta.round_robin = (idx + 1) % n;
                chosen.ok_or_else(|| ClusterError::ClusterUnavailable("no alive nodes".into()))?
            }
        };

        let targets = {
            let meta = self.meta.lock().unwrap();
            let n = self.nodes.len();
            let mut targets = vec![primary];
            let mut idx = (primary.0 + 1) % n;
            while targets.len() < replication && idx != primary.0 {
                if meta.alive[idx] {
                    targets.push(NodeId(idx));
                }
                idx = (idx + 1) % n;
            }
            targets
        };
        let degraded = targets.len() < replication;

        for node in &targets {
            let path = self.data_path(*node, dataset, name);
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(&path, bytes)?;
        }

        let file = StoredFile {
            dataset: dataset.to_string(),
            name: name.to_string(),
            size: bytes.len() as u64,
            digest,
            replicas: targets
                .iter()
                .map(|&node| Replica {
                    node,
                    health: ReplicaHealth::Ok,
                })
                .collect(),
            degraded,
        };
        self.append_journal(&format!(
            "PUT|{}/{}|{}|{:x}|{}",
            dataset,
            name,
            file.size,
            digest,
            targets
                .iter()
                .map(|n| n.0.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ))?;
        self.meta
            .lock()
            .unwrap()
            .files
            .insert(file.key(), file.clone());
        Ok(file)
    }

    pub fn file_meta(&self, dataset: &str, name: &str) -> Option<StoredFile> {
        self.meta
            .lock()
            .unwrap()
            .files
            .get(&format!("{dataset}/{name}"))
            .cloned()
    }

    /// Reads a file from the first healthy replica, re-verifying the digest.
    /// Replicas whose bytes no longer match are flagged corrupt.
    pub fn get_block(&self, dataset: &str, name: &str) -> Result<Vec<u8>, ClusterError> {
        let key = format!("{dataset}/{name}");
        let file = self
            .meta
            .lock()
            .unwrap()
            .files
            .get(&key)
            .cloned()
            .ok_or_else(|| ClusterError::UnknownFile(key.clone()))?;
        for (idx, replica) in file.replicas.iter().enumerate() {
            if replica.health != ReplicaHealth::Ok {
                continue;
            }
            if !self.is_alive(replica.node) {
                self.flag_replica(&key, idx, ReplicaHealth::Missing);
                continue;
            }
            let path = self.data_path(replica.node, dataset, name);
            match fs::read(&path) {
                Ok(bytes) if fnv64(&bytes) == file.digest => return Ok(bytes),
                Ok(_) => self.flag_replica(&key, idx, ReplicaHealth::Corrupt),
                Err(_) => self.flag_replica(&key, idx, ReplicaHealth::Missing),
            }
        }
        Err(ClusterError::AllReplicasFailed(key))
    }

    fn flag_replica(&self, key: &str, idx: usize, health: ReplicaHealth) {
        let mut meta = self.meta.lock().unwrap();
        if let Some(f) = meta.files.get_mut(key) {
            if let Some(r) = f.replicas.get_mut(idx) {
                r.health = health;
            }
        }
    }

    /// All stored files whose key satisfies the predicate, in lexicographic
    /// filename order.
    pub fn list_blocks(&self, pred: impl Fn(&StoredFile) -> bool) -> Vec<StoredFile> {
        let meta = self.meta.lock().unwrap();
        meta.files.values().filter(|f| pred(f)).cloned().collect()
    }

    pub fn list_dataset(&self, dataset: &str) -> Vec<StoredFile> {
        self.list_blocks(|f| f.dataset == dataset)
    }

    /// Removes a node from the alive set; its replicas become missing.
    pub fn kill_node(&self, node: NodeId) -> Result<(), ClusterError> {
        if node.0 >= self.nodes.len() {
            return Err(ClusterError::UnknownNode(node.name()));
        }
        self.append_journal(&format!("KILL|{}", node.0))?;
        let mut meta = self.meta.lock().unwrap();
        meta.alive[node.0] = false;
        mark_node_missing(&mut meta, node);
        Ok(())
    }

    /// Perturbs one replica's bytes; the damage is noticed on the next read.
    pub fn corrupt_block(
        &self,
        dataset: &str,
        name: &str,
        replica_index: usize,
    ) -> Result<(), ClusterError> {
        let key = format!("{dataset}/{name}");
        let file = self
            .meta
            .lock()
            .unwrap()
            .files
            .get(&key)
            .cloned()
            .ok_or_else(|| ClusterError::UnknownFile(key.clone()))?;
        let replica = file
            .replicas
            .get(replica_index)
            .ok_or(ClusterError::UnknownReplica {
                file: key.clone(),
                replica: replica_index,
            })?;
        let path = self.data_path(replica.node, dataset, name);
        let mut bytes = fs::read(&path)?;
        if bytes.is_empty() {
            bytes.push(0xAA);
        } else {
            bytes[0] ^= 0xFF;
        }
        fs::write(&path, bytes)?;
        self.append_journal(&format!("CORRUPT|{key}|{replica_index}"))?;
        self.flag_replica(&key, replica_index, ReplicaHealth::Corrupt);
        Ok(())
    }

    /// Adjusts the physical replica count, copying from a healthy replica
    /// onto distinct alive nodes (or trimming surplus copies).
    pub fn set_replication(
        &self,
        dataset: &str,
        name: &str,
        new_factor: usize,
    ) -> Result<StoredFile, ClusterError> {
        let key = format!("{dataset}/{name}");
        let bytes = self.get_block(dataset, name)?;
        let file = self
            .meta
            .lock()
            .unwrap()
            .files
            .get(&key)
            .cloned()
            .ok_or_else(|| ClusterError::UnknownFile(key.clone()))?;
        let mut kept: Vec<NodeId> = file
            .replicas
            .iter()
            .filter(|r| r.health == ReplicaHealth::Ok && self.is_alive(r.node))
            .map(|r| r.node)
            .collect();
        kept.truncate(new_factor);
        // Remove surplus and unhealthy replica files.
        for r in &file.replicas {
            if !kept.contains(&r.node) {
                let _ = fs::remove_file(self.data_path(r.node, dataset, name));
            }
        }
        // Add copies on distinct alive nodes not already holding one.
        let alive = self.alive_nodes();
        let start = kept.first().map(|n| n.0).unwrap_or(0);
        let mut order: Vec<NodeId> = alive
            .iter()
            .copied()
            .filter(|n| !kept.contains(n))
            .collect();
        order.sort_by_key(|n| (n.0 + self.nodes.len() - start) % self.nodes.len());
        for node in order {
            if kept.len() >= new_factor {
                break;
            }
            let path = self.data_path(node, dataset, name);
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(&path, &bytes)?;
            kept.push(node);
        }
        let degraded = kept.len() < new_factor;
        let updated = StoredFile {
            dataset: dataset.to_string(),
            name: name.to_string(),
            size: file.size,
            digest: file.digest,
            replicas: kept
                .iter()
                .map(|&node| Replica {
                    node,
                    health: ReplicaHealth::Ok,
                })
                .collect(),
            degraded,
        };
        self.append_journal(&format!(
            "REPL|{key}|{}",
            kept.iter()
                .map(|n| n.0.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ))?;
        self.meta.lock().unwrap().files.insert(key, updated.clone());
        if degraded {
            return Err(ClusterError::NotEnoughNodes {
                wanted: new_factor,
                placed: updated.replicas.len(),
            });
        }
        Ok(updated)
    }

    /// Total physical bytes stored for a dataset (size times replica count).
    pub fn physical_bytes(&self, dataset: &str) -> u64 {
        self.list_dataset(dataset)
            .iter()
            .map(|f| f.size * f.replicas.len() as u64)
            .sum()
    }
}
