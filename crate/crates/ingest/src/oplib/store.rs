//! The upload step: writes blocks into the cluster under label-encoded
//! filenames, honoring plan-level replication and placement labels, with an
//! optional erasure-coded pathway that stripes blocks and stores parity.

use std::collections::VecDeque;

use crate::access::name::encode_name;
use crate::item::{CoreError, IngestItem, Payload};
use crate::layout::{encode_block, EncodeOptions, LayoutId};
use crate::op::{Operator, OpSignature};
use crate::oplib::ExecCtx;
use crate::plan::OpSpec;
use crate::recovery::{append_stripe, StripeDescriptor};

pub struct StoreBlocks {
    sig: OpSignature,
    ctx: ExecCtx,
    replication: Option<usize>,
    erasure: Option<(usize, usize)>,
    pending: VecDeque<IngestItem>,
    /// Buffered (filename, bytes) pairs for the erasure pathway.
    stripe_buffer: Vec<(String, Vec<u8>)>,
    stripe_seq: u64,
}

impl StoreBlocks {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        let erasure = match (spec.int("erasure_k"), spec.int("erasure_m")) {
            (Some(k), Some(m)) if k >= 1 && m >= 1 => Some((k as usize, m as usize)),
            (None, None) => None,
            _ => {
                return Err(CoreError::BadParam {
                    name: format!("{}.erasure_k/erasure_m", spec.instance),
                    reason: "erasure coding needs both k >= 1 and m >= 1".into(),
                })
            }
        };
        Ok(StoreBlocks {
            replication: spec.int("replication").map(|v| v.max(1) as usize),
            erasure,
            sig,
            ctx: ctx.clone(),
            pending: VecDeque::new(),
            stripe_buffer: Vec::new(),
            stripe_seq: 0,
        })
    }

    fn cluster(&self) -> Result<&crate::cluster::Cluster, CoreError> {
        self.ctx
            .cluster
            .as_deref()
            .ok_or_else(|| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: "cluster unavailable".into(),
            })
    }

    fn payload_bytes(&self, item: &IngestItem) -> Result<Vec<u8>, CoreError> {
        match item.payload() {
            Payload::Serialized(bytes) => Ok(bytes.clone()),
            // Unserialized blocks are stored in the textual row layout.
            Payload::Block(block) => encode_block(block, LayoutId::StringRows, &EncodeOptions::default())
                .map_err(|e| CoreError::OperatorFailure {
                    op: self.sig.name.clone(),
                    reason: e.to_string(),
                }),
            _ => Err(CoreError::GranularityMismatch {
                op: self.sig.name.clone(),
                expected: "block|serialized-block".into(),
                actual: item.granularity().to_string(),
            }),
        }
    }

    fn filename_for(&self, item: &IngestItem) -> String {
        let values: Vec<String> = self
            .ctx
            .slots
            .iter()
            .map(|slot| item.label(slot).unwrap_or("").to_string())
            .collect();
        encode_name(&values)
    }

    fn replication_for(&self, item: &IngestItem) -> usize {
        // Plan-level replication already multiplied the items; each copy is
        // stored once. Otherwise the configured or cluster default applies.
        let plan_replicated = item
            .labels()
            .iter()
            .any(|l| self.ctx.replicate_ops.contains(&l.op_name));
        if plan_replicated {
            1
        } else {
            self.replication
                .unwrap_or_else(|| self.cluster().map(|c| c.default_replication).unwrap_or(1))
        }
    }

    fn location_for(&self, item: &IngestItem) -> Option<u64> {
        for l in item.labels() {
            if self.ctx.locate_ops.contains(&l.op_name) {
                if let Ok(id) = l.value.parse::<u64>() {
                    return Some(id);
                }
            }
        }
        None
    }

    fn put(
        &self,
        filename: &str,
        bytes: &[u8],
        replication: usize,
        location: Option<u64>,
    ) -> Result<(), CoreError> {
        let cluster = self.cluster()?;
        let stored = cluster
            .put_block(&self.ctx.dataset, filename, bytes, replication, location)
            .map_err(|e| CoreError::OperatorFailure {
                op: self.sig.name.clone(),
                reason: e.to_string(),
            })?;
        self.ctx.manifest.lock().unwrap().push(stored);
        Ok(())
    }

    fn flush_stripes(&mut self, k: usize, m: usize) -> Result<(), CoreError> {
        // Stripe membership must not depend on arrival order or on how the
        // blocks were spread over nodes: sort by filename.
        let mut buffered = std::mem::take(&mut self.stripe_buffer);
        buffered.sort_by(|a, b| a.0.cmp(&b.0));
        let cluster_default_loc = |seq: u64| Some(seq);
        let mut member_seq = 0u64;
        for group in buffered.chunks(k) {
            let stripe_id = format!("{}-{}", self.sig.name, self.stripe_seq);
            self.stripe_seq += 1;
            let true_lens: Vec<usize> = group.iter().map(|(_, b)| b.len()).collect();
            let padded = *true_lens.iter().max().unwrap_or(&0);
            let data_padded: Vec<Vec<u8>> = group
                .iter()
                .map(|(_, b)| {
                    let mut v = b.clone();
                    v.resize(padded, 0);
                    v
                })
                .collect();
            let parity = crate::recovery::rs::rs_encode(&data_padded, m).map_err(|e| {
                CoreError::OperatorFailure {
                    op: self.sig.name.clone(),
                    reason: e.to_string(),
                }
            })?;
            let mut parity_names = Vec::with_capacity(m);
            for (name, bytes) in group {
                self.put(name, bytes, 1, cluster_default_loc(member_seq))?;
                member_seq += 1;
            }
            for (i, p) in parity.iter().enumerate() {
                let pname = format!("{stripe_id}.p{i}");
                self.put(&pname, p, 1, cluster_default_loc(member_seq))?;
                member_seq += 1;
                parity_names.push(pname);
            }
            let descriptor = StripeDescriptor {
                id: stripe_id,
                k: group.len(),
                m,
                padded_len: padded,
                data: group.iter().map(|(n, _)| n.clone()).collect(),
                parity: parity_names,
                true_lens,
            };
            append_stripe(self.cluster()?, &self.ctx.dataset, &descriptor).map_err(|e| {
                CoreError::OperatorFailure {
                    op: self.sig.name.clone(),
                    reason: e.to_string(),
                }
            })?;
        }
        Ok(())
    }
}

impl Operator for StoreBlocks {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let labeled = item.with_label(&self.sig.name, "0")?;
            let bytes = self.payload_bytes(&labeled)?;
            let filename = self.filename_for(&labeled);
            if self.erasure.is_some() {
                self.stripe_buffer.push((filename, bytes));
            } else {
                let replication = self.replication_for(&labeled);
                let location = self.location_for(&labeled);
                self.put(&filename, &bytes, replication, location)?;
            }
            self.pending.push_back(labeled);
        }
        Ok(())
    }

    fn has_next(&mut self) -> Result<bool, CoreError> {
        Ok(!self.pending.is_empty() && self.erasure.is_none())
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
        if let Some((k, m)) = self.erasure {
            self.flush_stripes(k, m)?;
        }
        Ok(self.pending.drain(..).collect())
    }
}
