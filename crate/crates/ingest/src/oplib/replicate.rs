//! Replication operators: full k-way copies and probabilistic (Bernoulli)
//! sample replication.

use std::collections::VecDeque;

use crate::item::{CoreError, IngestItem};
use crate::op::{Operator, OpSignature};
use crate::oplib::{hash_to_unit, item_hash, ExecCtx};
use crate::plan::OpSpec;

/// Emits k deep copies of every input, labelled with replica ids 1..=k.
pub struct ReplicateK {
    sig: OpSignature,
    k: i64,
    pending: VecDeque<IngestItem>,
}

impl ReplicateK {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        let k = spec.int("k").unwrap_or(0);
        if k < 1 {
            return Err(CoreError::BadK(k));
        }
        Ok(ReplicateK {
            sig,
            k,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for ReplicateK {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            for i in 1..=self.k {
                self.pending
                    .push_back(item.with_label(&self.sig.name, i.to_string())?);
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
        Ok(Vec::new())
    }
}

/// Always forwards the original labelled "0"; with probability p also emits
/// a copy labelled "1". The draw is a keyed hash of the item's lineage, so
/// outcomes are reproducible and independent of arrival order.
pub struct Bernoulli {
    sig: OpSignature,
    p: f64,
    seed: u64,
    pending: VecDeque<IngestItem>,
}

impl Bernoulli {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        Ok(Bernoulli {
            p: spec.float("p").unwrap_or(0.0),
            seed: ctx.seed,
            sig,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for Bernoulli {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let draw = hash_to_unit(item_hash(self.seed, &self.sig.name, &item));
            self.pending
                .push_back(item.with_label(&self.sig.name, "0")?);
            if draw < self.p {
                self.pending
                    .push_back(item.with_label(&self.sig.name, "1")?);
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
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;

    fn item(i: u64) -> IngestItem {
        IngestItem::file(vec![i as u8])
            .with_label("input", i.to_string())
            .unwrap()
    }

    #[test]
    fn k1_single_copy_labelled_one() {
        let spec = OpSpec::new("replicate", "replicate_k").with("k", ParamValue::Int(1));
        let mut op = ReplicateK::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![item(0)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label("replicate"), Some("1"));
    }

    #[test]
    fn k3_three_copies_labelled_in_order() {
        let spec = OpSpec::new("replicate", "replicate_k").with("k", ParamValue::Int(3));
        let mut op = ReplicateK::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![item(0)]).unwrap();
        let labels: Vec<_> = out.iter().map(|i| i.label("replicate").unwrap()).collect();
        assert_eq!(labels, vec!["1", "2", "3"]);
    }

    #[test]
    fn output_count_is_k_times_inputs() {
        let spec = OpSpec::new("replicate", "replicate_k").with("k", ParamValue::Int(4));
        let mut op = ReplicateK::new(&spec, signature(&spec).unwrap()).unwrap();
        let inputs: Vec<_> = (0..25).map(item).collect();
        let out = drain_operator(&mut op, inputs).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn bad_k_rejected() {
        let spec = OpSpec::new("replicate", "replicate_k").with("k", ParamValue::Int(0));
        assert!(matches!(signature(&spec), Err(CoreError::BadK(0))));
    }

    #[test]
    fn bernoulli_p0_and_p1() {
        let ctx = ExecCtx::for_tests(7);
        let inputs: Vec<_> = (0..50).map(item).collect();

        let spec = OpSpec::new("sample", "replicate_bernoulli").with("p", ParamValue::Float(0.0));
        let mut op = Bernoulli::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, inputs.clone()).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|i| i.label("sample") == Some("0")));

        let spec = OpSpec::new("sample", "replicate_bernoulli").with("p", ParamValue::Float(1.0));
        let mut op = Bernoulli::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, inputs).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn bernoulli_is_replay_identical() {
        let ctx = ExecCtx::for_tests(42);
        let spec = OpSpec::new("sample", "replicate_bernoulli").with("p", ParamValue::Float(0.3));
        let inputs: Vec<_> = (0..200).map(item).collect();
        let run = |inputs: Vec<IngestItem>| {
            let mut op = Bernoulli::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
            drain_operator(&mut op, inputs).unwrap()
        };
        let a = run(inputs.clone());
        let b = run(inputs);
        assert_eq!(a, b);
    }
}
