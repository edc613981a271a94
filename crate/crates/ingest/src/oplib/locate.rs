//! Locators assign logical location ids; the store step maps ids to nodes.

use std::collections::VecDeque;

use crate::item::{CoreError, IngestItem};
use crate::op::{Operator, OpSignature};
use crate::oplib::{item_hash, ExecCtx};
use crate::plan::OpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    Random,
    CoLocateByPartition,
    DisjointAcrossReplicas,
}

pub fn validate_spec(spec: &OpSpec) -> Result<(), CoreError> {
    let policy = parse_policy(spec)?;
    match policy {
        Policy::CoLocateByPartition if spec.str("partition").is_none() => {
            Err(CoreError::BadParam {
                name: format!("{}.partition", spec.instance),
                reason: "co-location needs the partition operator name".into(),
            })
        }
        Policy::DisjointAcrossReplicas if spec.str("vary").is_none() => Err(CoreError::BadParam {
            name: format!("{}.vary", spec.instance),
            reason: "disjoint placement needs the replica operator name".into(),
        }),
        _ => Ok(()),
    }
}

fn parse_policy(spec: &OpSpec) -> Result<Policy, CoreError> {
    match spec.str("policy").unwrap_or("random") {
        "random" => Ok(Policy::Random),
        "co_partition" => Ok(Policy::CoLocateByPartition),
        "disjoint" => Ok(Policy::DisjointAcrossReplicas),
        other => Err(CoreError::BadParam {
            name: format!("{}.policy", spec.instance),
            reason: format!("unknown placement policy {other}"),
        }),
    }
}

pub struct Locate {
    sig: OpSignature,
    policy: Policy,
    locations: u64,
    partition_op: Option<String>,
    vary_op: Option<String>,
    serialize_ops: std::sync::Arc<std::collections::HashSet<String>>,
    seed: u64,
    pending: VecDeque<IngestItem>,
}

impl Locate {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        Ok(Locate {
            policy: parse_policy(spec)?,
            locations: spec.int("locations").unwrap_or(16).max(1) as u64,
            partition_op: spec.str("partition").map(str::to_string),
            vary_op: spec.str("vary").map(str::to_string),
            serialize_ops: ctx.serialize_ops.clone(),
            seed: ctx.seed,
            sig,
            pending: VecDeque::new(),
        })
    }

    fn location_of(&self, item: &IngestItem) -> Result<u64, CoreError> {
        match self.policy {
            Policy::Random => {
                Ok(item_hash(self.seed, &self.sig.name, item) % self.locations)
            }
            Policy::CoLocateByPartition => {
                let op = self.partition_op.as_deref().unwrap_or_default();
                let pid = item
                    .label(op)
                    .ok_or_else(|| CoreError::MissingLabel(op.to_string()))?;
                // Same partition id -> same location id, across datasets too.
                pid.parse::<u64>()
                    .or_else(|_| Ok::<u64, CoreError>(crate::item::fnv64(pid.as_bytes())))
            }
            Policy::DisjointAcrossReplicas => {
                let vary = self.vary_op.as_deref().unwrap_or_default();
                let replica = item
                    .label(vary)
                    .ok_or_else(|| CoreError::MissingLabel(vary.to_string()))?;
                let replica_idx = replica.parse::<u64>().unwrap_or_else(|_| {
                    crate::item::fnv64(replica.as_bytes())
                });
                // Block identity: lineage minus the replica-distinguishing
                // label and any serializer labels (replicas may differ only
                // in their physical layout).
                let mut h = crate::item::Fnv64::new();
                h.update(&self.seed.to_le_bytes());
                for l in item.labels() {
                    if l.op_name == vary || self.serialize_ops.contains(&l.op_name) {
                        continue;
                    }
                    h.update(l.op_name.as_bytes());
                    h.update(&[0x1f]);
                    h.update(l.value.as_bytes());
                    h.update(&[0x1e]);
                }
                Ok((h.finish().wrapping_add(replica_idx.wrapping_sub(1))) % self.locations)
            }
        }
    }
}

impl Operator for Locate {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let id = self.location_of(&item)?;
            self.pending
                .push_back(item.with_label(&self.sig.name, id.to_string())?);
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
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;

    #[test]
    fn co_locate_uses_partition_id() {
        let spec = OpSpec::new("loc", "locate")
            .with("policy", ParamValue::Str("co_partition".into()))
            .with("partition", ParamValue::Str("part".into()));
        let ctx = ExecCtx::for_tests(0);
        let mut op = Locate::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let items: Vec<_> = ["0", "1", "0"]
            .iter()
            .map(|pid| {
                IngestItem::serialized(vec![1])
                    .with_label("part", *pid)
                    .unwrap()
            })
            .collect();
        let out = drain_operator(&mut op, items).unwrap();
        let ids: Vec<_> = out.iter().map(|i| i.label("loc").unwrap()).collect();
        assert_eq!(ids, vec!["0", "1", "0"]);
    }

    #[test]
    fn disjoint_gives_replicas_distinct_locations() {
        let spec = OpSpec::new("loc", "locate")
            .with("policy", ParamValue::Str("disjoint".into()))
            .with("vary", ParamValue::Str("replicate".into()))
            .with("locations", ParamValue::Int(3));
        let ctx = ExecCtx::for_tests(0);
        let mut op = Locate::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let items: Vec<_> = (1..=3)
            .map(|r| {
                IngestItem::serialized(vec![9])
                    .with_label("file", "0")
                    .unwrap()
                    .with_label("replicate", r.to_string())
                    .unwrap()
            })
            .collect();
        let out = drain_operator(&mut op, items).unwrap();
        let mut ids: Vec<u64> = out
            .iter()
            .map(|i| i.label("loc").unwrap().parse().unwrap())
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn missing_label_is_reported() {
        let spec = OpSpec::new("loc", "locate")
            .with("policy", ParamValue::Str("co_partition".into()))
            .with("partition", ParamValue::Str("part".into()));
        let ctx = ExecCtx::for_tests(0);
        let mut op = Locate::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let err = drain_operator(&mut op, vec![IngestItem::serialized(vec![])]).unwrap_err();
        assert!(matches!(err, CoreError::MissingLabel(_)));
    }

    #[test]
    fn random_locations_replay_identically() {
        let spec = OpSpec::new("loc", "locate")
            .with("policy", ParamValue::Str("random".into()))
            .with("locations", ParamValue::Int(8));
        let ctx = ExecCtx::for_tests(77);
        let items: Vec<_> = (0..50)
            .map(|i| {
                IngestItem::serialized(vec![i])
                    .with_label("file", i.to_string())
                    .unwrap()
            })
            .collect();
        let run = |items: Vec<IngestItem>| {
            let mut op = Locate::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
            drain_operator(&mut op, items).unwrap()
        };
        assert_eq!(run(items.clone()), run(items));
    }
}
