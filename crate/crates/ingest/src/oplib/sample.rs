//! Reservoir and stratified sampling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::item::{fnv64, CoreError, IngestItem};
use crate::op::{Operator, OpSignature};
use crate::oplib::{record_fingerprint, ExecCtx};
use crate::plan::OpSpec;

/// Classic reservoir sampling (algorithm R) with a plan-seeded generator.
/// Emits nothing while iterating; the reservoir drains at finalize.
pub struct Reservoir {
    sig: OpSignature,
    capacity: usize,
    rng: ChaCha8Rng,
    seen: usize,
    reservoir: Vec<IngestItem>,
}

impl Reservoir {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        let capacity = spec.int("capacity").unwrap_or(0).max(0) as usize;
        let rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ fnv64(sig.name.as_bytes()));
        Ok(Reservoir {
            sig,
            capacity,
            rng,
            seen: 0,
            reservoir: Vec::new(),
        })
    }
}

impl Operator for Reservoir {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            self.seen += 1;
            if self.reservoir.len() < self.capacity {
                self.reservoir.push(item);
            } else {
                let j = self.rng.gen_range(0..self.seen);
                if j < self.capacity {
                    self.reservoir[j] = item;
                }
            }
        }
        Ok(())
    }

    fn has_next(&mut self) -> Result<bool, CoreError> {
        Ok(false)
    }

    fn next(&mut self) -> Result<IngestItem, CoreError> {
        Err(CoreError::OperatorFailure {
            op: self.sig.name.clone(),
            reason: "reservoir emits only at finalize".into(),
        })
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        let drained = std::mem::take(&mut self.reservoir);
        self.seen = 0;
        drained
            .into_iter()
            .map(|item| item.with_label(&self.sig.name, "1"))
            .collect()
    }
}

/// Stratified sampling: from each stratum of size s, picks round(rate * s)
/// items uniformly without replacement. Strata are defined by the label of
/// the configured partition operator, optionally refined by a second label
/// (`within`), so local sampling can stay stable across node counts.
pub struct Stratified {
    sig: OpSignature,
    rate: f64,
    by: String,
    within: Option<String>,
    min_one: bool,
    seed: u64,
    buffer: Vec<IngestItem>,
}

impl Stratified {
    pub fn new(spec: &OpSpec, sig: OpSignature, ctx: &ExecCtx) -> Result<Self, CoreError> {
        Ok(Stratified {
            rate: spec.float("rate").unwrap_or(0.0),
            by: spec.str("by").unwrap_or_default().to_string(),
            within: spec.str("within").map(str::to_string),
            min_one: spec.int("min_one").unwrap_or(0) != 0,
            seed: ctx.seed,
            sig,
            buffer: Vec::new(),
        })
    }
}

impl Operator for Stratified {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        self.buffer.extend(items);
        Ok(())
    }

    fn has_next(&mut self) -> Result<bool, CoreError> {
        Ok(false)
    }

    fn next(&mut self) -> Result<IngestItem, CoreError> {
        Err(CoreError::OperatorFailure {
            op: self.sig.name.clone(),
            reason: "stratified sampler emits only at finalize".into(),
        })
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        let buffer = std::mem::take(&mut self.buffer);
        // Group indexes by stratum key, preserving arrival order per group.
        let mut strata: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (idx, item) in buffer.iter().enumerate() {
            let stratum = item
                .label(&self.by)
                .ok_or_else(|| CoreError::MissingStratumLabel(self.by.clone()))?
                .to_string();
            let within = match &self.within {
                Some(op) => item.label(op).unwrap_or("").to_string(),
                None => String::new(),
            };
            strata.entry((within, stratum)).or_default().push(idx);
        }
        let mut chosen = vec![false; buffer.len()];
        for indexes in strata.values() {
            let s = indexes.len();
            let mut count = (self.rate * s as f64).round() as usize;
            if self.min_one && s >= 1 && count == 0 {
                count = 1;
            }
            let count = count.min(s);
            // Uniform without replacement, invariant to arrival order:
            // order candidates by a keyed record fingerprint.
            let mut ranked: Vec<usize> = indexes.clone();
            ranked.sort_by_key(|&idx| {
                (
                    record_fingerprint(self.seed, &self.sig.name, &buffer[idx]),
                    idx,
                )
            });
            for &idx in ranked.iter().take(count) {
                chosen[idx] = true;
            }
        }
        let mut out = Vec::new();
        for (idx, item) in buffer.into_iter().enumerate() {
            if chosen[idx] {
                out.push(item.with_label(&self.sig.name, "1")?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;

    fn item(i: u64) -> IngestItem {
        IngestItem::file(vec![])
            .with_label("input", "0")
            .unwrap()
            .with_label("id", i.to_string())
            .unwrap()
    }

    fn reservoir_spec(cap: i64) -> OpSpec {
        OpSpec::new("res", "reservoir_sample").with("capacity", ParamValue::Int(cap))
    }

    /// Independent reference: algorithm R over the same seeded generator.
    fn reference_reservoir(seed: u64, op_name: &str, n: usize, cap: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv64(op_name.as_bytes()));
        let mut res: Vec<usize> = Vec::new();
        for i in 0..n {
            if res.len() < cap {
                res.push(i);
            } else {
                let j = rng.gen_range(0..i + 1);
                if j < cap {
                    res[j] = i;
                }
            }
        }
        res
    }

    #[test]
    fn reservoir_holds_everything_under_capacity() {
        let ctx = ExecCtx::for_tests(0);
        let spec = reservoir_spec(10);
        let mut op = Reservoir::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, (0..4).map(item).collect()).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|i| i.label("res") == Some("1")));
    }

    #[test]
    fn reservoir_empty_stream_emits_nothing() {
        let ctx = ExecCtx::for_tests(0);
        let spec = reservoir_spec(3);
        let mut op = Reservoir::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, Vec::new()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn reservoir_emits_only_at_finalize_and_matches_reference() {
        let ctx = ExecCtx::for_tests(99);
        let spec = reservoir_spec(2);
        let sig = signature(&spec).unwrap();
        let mut op = Reservoir::new(&spec, sig, &ctx).unwrap();
        op.initialize().unwrap();
        op.set_input((0..5).map(item).collect()).unwrap();
        assert!(!op.has_next().unwrap());
        let out = op.finalize().unwrap();
        assert_eq!(out.len(), 2);

        let expected = reference_reservoir(99, "res", 5, 2);
        let got: Vec<usize> = out
            .iter()
            .map(|i| i.label("id").unwrap().parse().unwrap())
            .collect();
        assert_eq!(got, expected);
    }

    fn strat_item(stratum: &str, i: u64) -> IngestItem {
        let schema = std::sync::Arc::new(crate::item::Schema::parse("k:int64").unwrap());
        IngestItem::record(crate::item::Record::new(
            schema,
            vec![crate::item::Value::Int(i as i64)],
        ))
        .with_label("input", "0")
        .unwrap()
        .with_label("id", i.to_string())
        .unwrap()
        .with_label("strata", stratum)
        .unwrap()
    }

    #[test]
    fn stratified_counts_are_exact() {
        let ctx = ExecCtx::for_tests(5);
        let spec = OpSpec::new("st", "stratified_sample")
            .with("rate", ParamValue::Float(0.1))
            .with("by", ParamValue::Str("strata".into()));
        let mut items = Vec::new();
        for i in 0..90 {
            items.push(strat_item("big", i));
        }
        for i in 90..100 {
            items.push(strat_item("small", i));
        }
        let mut op = Stratified::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, items).unwrap();
        let big = out.iter().filter(|i| i.label("strata") == Some("big")).count();
        let small = out
            .iter()
            .filter(|i| i.label("strata") == Some("small"))
            .count();
        assert_eq!(big, 9);
        assert_eq!(small, 1);
    }

    #[test]
    fn stratified_rate_one_keeps_all() {
        let ctx = ExecCtx::for_tests(5);
        let spec = OpSpec::new("st", "stratified_sample")
            .with("rate", ParamValue::Float(1.0))
            .with("by", ParamValue::Str("strata".into()));
        let items: Vec<_> = (0..17).map(|i| strat_item("only", i)).collect();
        let mut op = Stratified::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let out = drain_operator(&mut op, items).unwrap();
        assert_eq!(out.len(), 17);
    }

    #[test]
    fn stratified_missing_label_is_error() {
        let ctx = ExecCtx::for_tests(5);
        let spec = OpSpec::new("st", "stratified_sample")
            .with("rate", ParamValue::Float(0.5))
            .with("by", ParamValue::Str("strata".into()));
        let mut op = Stratified::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
        let schema = std::sync::Arc::new(crate::item::Schema::parse("k:int64").unwrap());
        let unlabeled = IngestItem::record(crate::item::Record::new(
            schema,
            vec![crate::item::Value::Int(1)],
        ));
        let err = drain_operator(&mut op, vec![unlabeled]).unwrap_err();
        assert!(matches!(err, CoreError::MissingStratumLabel(_)));
    }

    #[test]
    fn stratified_selection_is_arrival_order_invariant() {
        let ctx = ExecCtx::for_tests(11);
        let spec = OpSpec::new("st", "stratified_sample")
            .with("rate", ParamValue::Float(0.3))
            .with("by", ParamValue::Str("strata".into()));
        let items: Vec<_> = (0..40).map(|i| strat_item(if i % 2 == 0 { "a" } else { "b" }, i)).collect();
        let mut reversed = items.clone();
        reversed.reverse();

        let run = |input: Vec<IngestItem>| {
            let mut op = Stratified::new(&spec, signature(&spec).unwrap(), &ctx).unwrap();
            let mut ids: Vec<u64> = drain_operator(&mut op, input)
                .unwrap()
                .iter()
                .map(|i| i.label("id").unwrap().parse().unwrap())
                .collect();
            ids.sort_unstable();
            ids
        };
        assert_eq!(run(items), run(reversed));
    }
}
