//! Logical partitioning: hash, range and list, assigning partition ids as
//! labels.

use std::collections::VecDeque;

use crate::item::{CoreError, IngestItem, Value};
use crate::op::{Operator, OpSignature};
use crate::oplib::stable_key_hash;
use crate::plan::OpSpec;

#[derive(Debug, Clone)]
enum Kind {
    Hash { buckets: u64 },
    Range { bounds: Vec<Value> },
    List { values: Vec<String> },
}

pub fn validate_spec(spec: &OpSpec) -> Result<(), CoreError> {
    parse_kind(spec).map(|_| ())
}

fn parse_kind(spec: &OpSpec) -> Result<Kind, CoreError> {
    match spec.str("kind").unwrap_or("hash") {
        "hash" => {
            let buckets = spec.int("buckets").unwrap_or(1);
            if buckets < 1 {
                return Err(CoreError::BadParam {
                    name: format!("{}.buckets", spec.instance),
                    reason: "bucket count must be >= 1".into(),
                });
            }
            Ok(Kind::Hash {
                buckets: buckets as u64,
            })
        }
        "range" => {
            let raw = spec.str("bounds").ok_or_else(|| CoreError::BadParam {
                name: format!("{}.bounds", spec.instance),
                reason: "range partitioning needs bounds".into(),
            })?;
            let mut bounds = Vec::new();
            for part in raw.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let v = part
                    .parse::<i64>()
                    .map(Value::Int)
                    .or_else(|_| part.parse::<f64>().map(Value::Float))
                    .unwrap_or_else(|_| Value::Str(part.to_string()));
                bounds.push(v);
            }
            for w in bounds.windows(2) {
                if w[0].compare(&w[1]) != Some(std::cmp::Ordering::Less) {
                    return Err(CoreError::BadParam {
                        name: format!("{}.bounds", spec.instance),
                        reason: "range boundaries must be strictly increasing".into(),
                    });
                }
            }
            if bounds.is_empty() {
                return Err(CoreError::BadParam {
                    name: format!("{}.bounds", spec.instance),
                    reason: "no boundaries given".into(),
                });
            }
            Ok(Kind::Range { bounds })
        }
        "list" => {
            let raw = spec.str("values").ok_or_else(|| CoreError::BadParam {
                name: format!("{}.values", spec.instance),
                reason: "list partitioning needs values".into(),
            })?;
            Ok(Kind::List {
                values: super::comma_list(raw),
            })
        }
        other => Err(CoreError::BadParam {
            name: format!("{}.kind", spec.instance),
            reason: format!("unknown partition kind {other}"),
        }),
    }
}

pub struct PartitionLogical {
    sig: OpSignature,
    key: String,
    kind: Kind,
    pending: VecDeque<IngestItem>,
}

impl PartitionLogical {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        Ok(PartitionLogical {
            key: spec.str("key").unwrap_or_default().to_string(),
            kind: parse_kind(spec)?,
            sig,
            pending: VecDeque::new(),
        })
    }

    fn partition_id(&self, key: &Value) -> String {
        match &self.kind {
            Kind::Hash { buckets } => (stable_key_hash(key) % buckets).to_string(),
            Kind::Range { bounds } => {
                // Index of the first boundary greater than the key.
                let mut pid = bounds.len();
                for (i, b) in bounds.iter().enumerate() {
                    if key.compare(b) == Some(std::cmp::Ordering::Less) {
                        pid = i;
                        break;
                    }
                }
                pid.to_string()
            }
            Kind::List { values } => {
                let canon = key.canonical();
                match values.iter().position(|v| *v == canon) {
                    Some(idx) => idx.to_string(),
                    None => "other".to_string(),
                }
            }
        }
    }
}

impl Operator for PartitionLogical {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let record = item.expect_record(&self.sig.name)?;
            let key = record.get(&self.key)?;
            let pid = self.partition_id(key);
            self.pending.push_back(item.with_label(&self.sig.name, pid)?);
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
    use crate::item::{Record, Schema};
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;
    use std::sync::Arc;

    fn rec(v: i64) -> IngestItem {
        let schema = Arc::new(Schema::parse("k:int64").unwrap());
        IngestItem::record(Record::new(schema, vec![Value::Int(v)]))
    }

    #[test]
    fn range_partition_boundaries() {
        let spec = OpSpec::new("part", "partition")
            .with("kind", ParamValue::Str("range".into()))
            .with("key", ParamValue::Str("k".into()))
            .with("bounds", ParamValue::Str("10,20".into()));
        let mut op = PartitionLogical::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![rec(5), rec(15), rec(25), rec(10)]).unwrap();
        let pids: Vec<_> = out.iter().map(|i| i.label("part").unwrap()).collect();
        assert_eq!(pids, vec!["0", "1", "2", "1"]);
    }

    #[test]
    fn hash_single_bucket_is_zero() {
        let spec = OpSpec::new("part", "partition")
            .with("kind", ParamValue::Str("hash".into()))
            .with("key", ParamValue::Str("k".into()))
            .with("buckets", ParamValue::Int(1));
        let mut op = PartitionLogical::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, (0..20).map(rec).collect()).unwrap();
        assert!(out.iter().all(|i| i.label("part") == Some("0")));
    }

    #[test]
    fn hash_matches_brute_force_histogram() {
        let spec = OpSpec::new("part", "partition")
            .with("kind", ParamValue::Str("hash".into()))
            .with("key", ParamValue::Str("k".into()))
            .with("buckets", ParamValue::Int(8));
        let mut op = PartitionLogical::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, (0..10_000).map(rec).collect()).unwrap();
        let mut histogram = vec![0u64; 8];
        for item in &out {
            histogram[item.label("part").unwrap().parse::<usize>().unwrap()] += 1;
        }
        // Brute-force oracle over the same key space.
        let mut expected = vec![0u64; 8];
        for v in 0..10_000i64 {
            let h = stable_key_hash(&Value::Int(v));
            expected[(h % 8) as usize] += 1;
        }
        assert_eq!(histogram, expected);
        assert!(expected.iter().all(|&c| c > 0));
    }

    #[test]
    fn list_partition_falls_back_to_other() {
        let schema = Arc::new(Schema::parse("s:string").unwrap());
        let item = |v: &str| {
            IngestItem::record(Record::new(schema.clone(), vec![Value::Str(v.into())]))
        };
        let spec = OpSpec::new("part", "partition")
            .with("kind", ParamValue::Str("list".into()))
            .with("key", ParamValue::Str("s".into()))
            .with("values", ParamValue::Str("A,B".into()));
        let mut op = PartitionLogical::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![item("B"), item("Z"), item("A")]).unwrap();
        let pids: Vec<_> = out.iter().map(|i| i.label("part").unwrap()).collect();
        assert_eq!(pids, vec!["1", "other", "0"]);
    }

    #[test]
    fn non_increasing_bounds_rejected() {
        let spec = OpSpec::new("part", "partition")
            .with("kind", ParamValue::Str("range".into()))
            .with("key", ParamValue::Str("k".into()))
            .with("bounds", ParamValue::Str("20,10".into()));
        assert!(signature(&spec).is_err());
    }
}
