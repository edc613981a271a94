//! Physical partitioning: greedy packing of records into blocks by encoded
//! byte size. Records never mix across label groups (replica, partition and
//! every other non-per-item label), so each group yields its own block
//! sequence and the group labels become the block's lineage.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::item::{Block, CoreError, IngestItem, Label};
use crate::op::{Operator, OpSignature};
use crate::oplib::{group_key, ExecCtx};
use crate::plan::OpSpec;

struct Group {
    labels: Vec<Label>,
    records: Vec<crate::item::Record>,
    bytes: usize,
    next_index: u64,
}

pub struct ChunkBySize {
    sig: OpSignature,
    max_bytes: usize,
    per_item_ops: Arc<HashSet<String>>,
    dropped: Arc<std::sync::Mutex<std::collections::BTreeMap<String, u64>>>,
    groups: HashMap<u64, Group>,
    group_order: Vec<u64>,
    pending: VecDeque<IngestItem>,
}

impl ChunkBySize {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        Ok(ChunkBySize {
            max_bytes: spec.int("max_bytes").unwrap_or(0).max(1) as usize,
            per_item_ops: ctx.per_item_ops.clone(),
            dropped: ctx.dropped_labels.clone(),
            sig,
            groups: HashMap::new(),
            group_order: Vec::new(),
            pending: VecDeque::new(),
        })
    }

    fn flush_group(&mut self, key_hash: u64) -> Result<(), CoreError> {
        let group = self.groups.get_mut(&key_hash).unwrap();
        if group.records.is_empty() {
            return Ok(());
        }
        let records = std::mem::take(&mut group.records);
        group.bytes = 0;
        let schema = records[0].schema.clone();
        let mut item = IngestItem::block(Block { schema, records });
        for l in &group.labels {
            item = item.with_label(&l.op_name, &l.value)?;
        }
        let item = item.with_label(&self.sig.name, group.next_index.to_string())?;
        group.next_index += 1;
        self.pending.push_back(item);
        Ok(())
    }
}

impl Operator for ChunkBySize {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let record = item.expect_record(&self.sig.name)?.clone();
            let key = group_key(&item, &self.per_item_ops);
            let key_hash = crate::oplib::hash_group_key(&key);
            if !self.groups.contains_key(&key_hash) {
                // Per-item labels dropped at this materialization are logged.
                let mut dropped = self.dropped.lock().unwrap();
                for l in item.labels() {
                    if self.per_item_ops.contains(&l.op_name) {
                        *dropped.entry(l.op_name.clone()).or_insert(0) += 1;
                    }
                }
                self.groups.insert(
                    key_hash,
                    Group {
                        labels: key
                            .iter()
                            .map(|(op, value)| Label::new(op.clone(), value.clone()))
                            .collect(),
                        records: Vec::new(),
                        bytes: 0,
                        next_index: 0,
                    },
                );
                self.group_order.push(key_hash);
            }
            let size = record.encoded_size();
            let group = self.groups.get_mut(&key_hash).unwrap();
            if !group.records.is_empty() && group.bytes + size > self.max_bytes {
                self.flush_group(key_hash)?;
            }
            let group = self.groups.get_mut(&key_hash).unwrap();
            group.records.push(record);
            group.bytes += size;
            // A single oversized record still forms its own block.
            let group = self.groups.get_mut(&key_hash).unwrap();
            if group.bytes >= self.max_bytes {
                self.flush_group(key_hash)?;
            }
        }
        Ok(())
    }

    fn has_next(&mut self) -> Result<bool, CoreError> {
        Ok(!self.pending.is_empty())
    }

    fn next(&mut self) -> Result<IngestItem, CoreError> {
        self.pending
            .pop_front()
            .ok_or_else(|| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: "next called with no pending output".into(),
            })
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        let order = self.group_order.clone();
        for key_hash in order {
            self.flush_group(key_hash)?;
        }
        self.groups.clear();
        self.group_order.clear();
        Ok(self.pending.drain(..).collect())
    }
}
