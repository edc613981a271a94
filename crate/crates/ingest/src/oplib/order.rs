//! Record ordering, globally over the drained stream or per chunk.

use std::collections::VecDeque;

use crate::item::{Block, CoreError, Granularity, IngestItem, Payload};
use crate::op::{Operator, OpSignature};
use crate::plan::OpSpec;

pub struct OrderRecords {
    sig: OpSignature,
    key: String,
    per_chunk: bool,
    buffer: Vec<IngestItem>,
    pending: VecDeque<IngestItem>,
    seq: u64,
}

impl OrderRecords {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        Ok(OrderRecords {
            key: spec.str("key").unwrap_or_default().to_string(),
            per_chunk: spec.str("scope") == Some("chunk"),
            sig,
            buffer: Vec::new(),
            pending: VecDeque::new(),
            seq: 0,
        })
    }

    fn label_next(&mut self, item: IngestItem) -> Result<IngestItem, CoreError> {
        let out = item.with_label(&self.sig.name, self.seq.to_string())?;
        self.seq += 1;
        Ok(out)
    }
}

impl Operator for OrderRecords {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        if self.per_chunk {
            for item in items {
                if item.granularity() != Granularity::Block {
                    return Err(CoreError::GranularityMismatch {
                        op: self.sig.name.clone(),
                        expected: "block".into(),
                        actual: item.granularity().to_string(),
                    });
                }
                let block = item.expect_block(&self.sig.name)?;
                let idx = block.schema.require(&self.key)?;
                let mut records = block.records.clone();
                records.sort_by(|a, b| {
                    a.values[idx]
                        .compare(&b.values[idx])
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let sorted = item.map_payload(Payload::Block(Block {
                    schema: block.schema.clone(),
                    records,
                }));
                let out = self.label_next(sorted)?;
                self.pending.push_back(out);
            }
        } else {
            for item in items {
                item.expect_record(&self.sig.name)?;
                self.buffer.push(item);
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
        if self.per_chunk {
            return Ok(Vec::new());
        }
        let mut buffer = std::mem::take(&mut self.buffer);
        if buffer.is_empty() {
            return Ok(Vec::new());
        }
        let idx = buffer[0]
            .expect_record(&self.sig.name)?
            .schema
            .require(&self.key)?;
        buffer.sort_by(|a, b| {
            let ra = a.expect_record("order").unwrap();
            let rb = b.expect_record("order").unwrap();
            ra.values[idx]
                .compare(&rb.values[idx])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        buffer.into_iter().map(|i| self.label_next(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item::{Record, Schema, Value};
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;
    use std::sync::Arc;

    fn rec(v: i64, tag: &str) -> IngestItem {
        let schema = Arc::new(Schema::parse("k:int64,tag:string").unwrap());
        IngestItem::record(Record::new(
            schema,
            vec![Value::Int(v), Value::Str(tag.into())],
        ))
    }

    fn keys(items: &[IngestItem]) -> Vec<i64> {
        items
            .iter()
            .map(|i| match i.expect_record("t").unwrap().values[0] {
                Value::Int(v) => v,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn sorted_input_unchanged_reverse_sorted() {
        let spec = OpSpec::new("order", "order_records").with("key", ParamValue::Str("k".into()));
        let mut op = OrderRecords::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, (1..=5).map(|v| rec(v, "a")).collect()).unwrap();
        assert_eq!(keys(&out), vec![1, 2, 3, 4, 5]);

        let mut op = OrderRecords::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, (1..=5).rev().map(|v| rec(v, "a")).collect()).unwrap();
        assert_eq!(keys(&out), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn matches_reference_sort_and_is_stable() {
        let spec = OpSpec::new("order", "order_records").with("key", ParamValue::Str("k".into()));
        let mut state = 88172645463325252u64;
        let mut input = Vec::new();
        for i in 0..10_000 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            input.push(rec((state % 500) as i64, &format!("t{i}")));
        }
        let mut expected: Vec<(i64, String)> = input
            .iter()
            .map(|i| {
                let r = i.expect_record("t").unwrap();
                let Value::Int(k) = r.values[0] else { panic!() };
                let Value::Str(tag) = &r.values[1] else { panic!() };
                (k, tag.clone())
            })
            .collect();
        expected.sort_by_key(|(k, _)| *k);

        let mut op = OrderRecords::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, input).unwrap();
        let got: Vec<(i64, String)> = out
            .iter()
            .map(|i| {
                let r = i.expect_record("t").unwrap();
                let Value::Int(k) = r.values[0] else { panic!() };
                let Value::Str(tag) = &r.values[1] else { panic!() };
                (k, tag.clone())
            })
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn per_chunk_scope_sorts_within_blocks() {
        let schema = Arc::new(Schema::parse("k:int64,tag:string").unwrap());
        let block = |vals: &[i64]| {
            IngestItem::block(Block {
                schema: schema.clone(),
                records: vals
                    .iter()
                    .map(|&v| {
                        Record::new(schema.clone(), vec![Value::Int(v), Value::Str("x".into())])
                    })
                    .collect(),
            })
        };
        let spec = OpSpec::new("order", "order_records")
            .with("key", ParamValue::Str("k".into()))
            .with("scope", ParamValue::Str("chunk".into()));
        let mut op = OrderRecords::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![block(&[3, 1, 2]), block(&[9, 7])]).unwrap();
        let sorted: Vec<Vec<i64>> = out
            .iter()
            .map(|i| {
                i.expect_block("t")
                    .unwrap()
                    .records
                    .iter()
                    .map(|r| match r.values[0] {
                        Value::Int(v) => v,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        assert_eq!(sorted, vec![vec![1, 2, 3], vec![7, 9]]);
    }
}
