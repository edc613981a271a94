//! Data-quality rule checks at load time: functional dependencies and
//! denial constraints. Both label every record and pass it through; FD
//! violations additionally land on the reject side-channel.

use std::collections::{BTreeMap, VecDeque};

use crate::item::{CoreError, IngestItem, ViolationRecord};
use crate::op::{Operator, OpSignature};
use crate::plan::OpSpec;
use crate::pred::Predicate;

/// Functional dependency lhs -> rhs. Within each lhs group, records whose
/// rhs value is not the group's plurality value are flagged. Plurality ties
/// break to the smallest rhs value in canonical order.
pub struct FdCheck {
    sig: OpSignature,
    lhs: String,
    rhs: String,
    buffer: Vec<IngestItem>,
    rejects: Vec<ViolationRecord>,
}

impl FdCheck {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        Ok(FdCheck {
            lhs: spec.str("lhs").unwrap_or_default().to_string(),
            rhs: spec.str("rhs").unwrap_or_default().to_string(),
            sig,
            buffer: Vec::new(),
            rejects: Vec::new(),
        })
    }
}

impl Operator for FdCheck {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in &items {
            let r = item.expect_record(&self.sig.name)?;
            r.get(&self.lhs)?;
            r.get(&self.rhs)?;
        }
        self.buffer.extend(items);
        Ok(())
    }

    fn has_next(&mut self) -> Result<bool, CoreError> {
        Ok(false)
    }

    fn next(&mut self) -> Result<IngestItem, CoreError> {
        Err(CoreError::OperatorFailure {
            op: self.sig.name.clone(),
            reason: "fd check emits only at finalize".into(),
        })
    }

    fn finalize(&mut self) -> Result<Vec<IngestItem>, CoreError> {
        let buffer = std::mem::take(&mut self.buffer);
        // Per lhs value: rhs value -> occurrence count.
        let mut groups: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for item in &buffer {
            let r = item.expect_record(&self.sig.name)?;
            let lhs = r.get(&self.lhs)?.canonical();
            let rhs = r.get(&self.rhs)?.canonical();
            *groups.entry(lhs).or_default().entry(rhs).or_insert(0) += 1;
        }
        // Plurality rhs per group; ties break to the smallest rhs value
        // (BTreeMap iterates in ascending key order).
        let plurality: BTreeMap<String, String> = groups
            .iter()
            .map(|(lhs, counts)| {
                let best = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(rhs, _)| rhs.clone())
                    .unwrap_or_default();
                (lhs.clone(), best)
            })
            .collect();

        let mut out = Vec::with_capacity(buffer.len());
        for item in buffer {
            let r = item.expect_record(&self.sig.name)?;
            let lhs = r.get(&self.lhs)?.canonical();
            let rhs = r.get(&self.rhs)?.canonical();
            let violating = plurality.get(&lhs).map(|p| *p != rhs).unwrap_or(false)
                && groups.get(&lhs).map(|c| c.len() > 1).unwrap_or(false);
            if violating {
                self.rejects.push(ViolationRecord {
                    rule: self.sig.name.clone(),
                    reason: format!(
                        "{} = {lhs} maps to {} = {rhs}, expected {}",
                        self.lhs,
                        self.rhs,
                        plurality.get(&lhs).cloned().unwrap_or_default()
                    ),
                    raw: None,
                    record: Some(r.clone()),
                });
            }
            out.push(item.with_label(&self.sig.name, if violating { "1" } else { "0" })?);
        }
        Ok(out)
    }

    fn take_rejects(&mut self) -> Vec<ViolationRecord> {
        std::mem::take(&mut self.rejects)
    }
}

/// Denial constraint: a record is a violation when the configured predicate
/// matches. The record always passes through, labelled "1" or "0".
pub struct DcCheck {
    sig: OpSignature,
    violation: Predicate,
    pending: VecDeque<IngestItem>,
}

impl DcCheck {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        Ok(DcCheck {
            violation: Predicate::parse(spec.str("pred").unwrap_or_default())?,
            sig,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for DcCheck {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let r = item.expect_record(&self.sig.name)?;
            let violating = self.violation.matches(r)?;
            self.pending
                .push_back(item.with_label(&self.sig.name, if violating { "1" } else { "0" })?);
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
    use crate::item::{Record, Schema, Value};
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;
    use std::sync::Arc;

    fn li(ship: &str, status: &str) -> IngestItem {
        let schema = Arc::new(Schema::parse("shipdate:string,linestatus:string").unwrap());
        IngestItem::record(Record::new(
            schema,
            vec![Value::Str(ship.into()), Value::Str(status.into())],
        ))
    }

    fn fd_spec() -> OpSpec {
        OpSpec::new("fd", "fd_check")
            .with("lhs", ParamValue::Str("shipdate".into()))
            .with("rhs", ParamValue::Str("linestatus".into()))
    }

    #[test]
    fn uniform_group_has_no_violations() {
        let mut op = FdCheck::new(&fd_spec(), signature(&fd_spec()).unwrap()).unwrap();
        let out = drain_operator(
            &mut op,
            vec![li("d1", "O"), li("d1", "O"), li("d1", "O")],
        )
        .unwrap();
        assert!(out.iter().all(|i| i.label("fd") == Some("0")));
        assert!(op.take_rejects().is_empty());
    }

    #[test]
    fn minority_value_is_flagged() {
        let mut op = FdCheck::new(&fd_spec(), signature(&fd_spec()).unwrap()).unwrap();
        let out = drain_operator(
            &mut op,
            vec![li("d1", "O"), li("d1", "O"), li("d1", "F")],
        )
        .unwrap();
        let labels: Vec<_> = out.iter().map(|i| i.label("fd").unwrap()).collect();
        assert_eq!(labels, vec!["0", "0", "1"]);
        assert_eq!(op.take_rejects().len(), 1);
    }

    #[test]
    fn plurality_tie_breaks_to_smallest_rhs() {
        let mut op = FdCheck::new(&fd_spec(), signature(&fd_spec()).unwrap()).unwrap();
        let out = drain_operator(&mut op, vec![li("d1", "O"), li("d1", "F")]).unwrap();
        // Tie between O and F: plurality is "F" (smallest), "O" is flagged.
        let labels: Vec<_> = out.iter().map(|i| i.label("fd").unwrap()).collect();
        assert_eq!(labels, vec!["1", "0"]);
    }

    /// Oracle: all-pairs check within each lhs group. A record violates the
    /// FD exactly when it disagrees with the group plurality, under the
    /// same tie-break, so the pairwise disagreement set must match.
    #[test]
    fn matches_all_pairs_oracle_on_seeded_data() {
        let mut state = 0xdeadbeefu64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let items: Vec<IngestItem> = (0..800)
            .map(|_| {
                let group = format!("d{}", rnd() % 40);
                let status = if rnd() % 10 < 2 { "F" } else { "O" };
                li(&group, status)
            })
            .collect();

        // Oracle: for each group, compute plurality by brute-force pair
        // counting, flag records disagreeing with it.
        let mut per_group: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (idx, item) in items.iter().enumerate() {
            let r = item.expect_record("t").unwrap();
            per_group
                .entry(r.get("shipdate").unwrap().canonical())
                .or_default()
                .push((idx, r.get("linestatus").unwrap().canonical()));
        }
        let mut expected = vec![false; items.len()];
        for members in per_group.values() {
            let distinct: std::collections::BTreeSet<&String> =
                members.iter().map(|(_, s)| s).collect();
            if distinct.len() <= 1 {
                continue;
            }
            // Pairwise counts: value with the most agreements wins.
            let mut best: Option<(&String, usize)> = None;
            for v in &distinct {
                let agreements = members.iter().filter(|(_, s)| &s == v).count();
                best = match best {
                    None => Some((v, agreements)),
                    Some((bv, bc)) => {
                        if agreements > bc || (agreements == bc && v < &bv) {
                            Some((v, agreements))
                        } else {
                            Some((bv, bc))
                        }
                    }
                };
            }
            let plurality = best.unwrap().0.clone();
            for (idx, s) in members {
                if *s != plurality {
                    expected[*idx] = true;
                }
            }
        }

        let mut op = FdCheck::new(&fd_spec(), signature(&fd_spec()).unwrap()).unwrap();
        let out = drain_operator(&mut op, items).unwrap();
        let got: Vec<bool> = out.iter().map(|i| i.label("fd") == Some("1")).collect();
        assert_eq!(got, expected);
    }

    fn dc_item(q: i64, d: f64) -> IngestItem {
        let schema = Arc::new(Schema::parse("quantity:int64,discount:float64").unwrap());
        IngestItem::record(Record::new(schema, vec![Value::Int(q), Value::Float(d)]))
    }

    #[test]
    fn dc_rule_boundaries() {
        let spec = OpSpec::new("dc", "dc_check")
            .with("pred", ParamValue::Str("quantity < 3 AND discount > 0.09".into()));
        let mut op = DcCheck::new(&spec, signature(&spec).unwrap()).unwrap();
        let out = drain_operator(
            &mut op,
            vec![dc_item(2, 0.10), dc_item(5, 0.10), dc_item(2, 0.09)],
        )
        .unwrap();
        let labels: Vec<_> = out.iter().map(|i| i.label("dc").unwrap()).collect();
        assert_eq!(labels, vec!["1", "0", "0"]);
        assert_eq!(out.len(), 3);
    }
}
