//! Single-pass value repair with a dictionary of canonical replacements.

use std::collections::{BTreeMap, VecDeque};

use crate::item::{CoreError, IngestItem, Payload, Value, ViolationRecord};
use crate::op::{Operator, OpSignature};
use crate::plan::OpSpec;
use crate::pred::Predicate;

enum Validity {
    /// Record is invalid when the predicate matches.
    InvalidWhen(Predicate),
    /// Attribute value is valid when it appears in the set.
    ValidValues(Vec<String>),
}

pub fn validate_spec(spec: &OpSpec) -> Result<(), CoreError> {
    parse_validity(spec).map(|_| ())
}

fn parse_validity(spec: &OpSpec) -> Result<Validity, CoreError> {
    if let Some(pred) = spec.str("invalid_when") {
        return Ok(Validity::InvalidWhen(Predicate::parse(pred)?));
    }
    if let Some(values) = spec.str("valid_values") {
        return Ok(Validity::ValidValues(super::comma_list(values)));
    }
    Err(CoreError::BadParam {
        name: format!("{}", spec.instance),
        reason: "repair needs either invalid_when or valid_values".into(),
    })
}

fn parse_dict(spec: &OpSpec) -> BTreeMap<String, String> {
    let mut dict = BTreeMap::new();
    if let Some(raw) = spec.str("dict") {
        for pair in raw.split(',') {
            if let Some((from, to)) = pair.split_once(':') {
                dict.insert(from.trim().to_string(), to.trim().to_string());
            }
        }
    }
    dict
}

pub struct SinglePassRepair {
    sig: OpSignature,
    attr: String,
    validity: Validity,
    dict: BTreeMap<String, String>,
    pending: VecDeque<IngestItem>,
    rejects: Vec<ViolationRecord>,
}

impl SinglePassRepair {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        Ok(SinglePassRepair {
            attr: spec.str("attr").unwrap_or_default().to_string(),
            validity: parse_validity(spec)?,
            dict: parse_dict(spec),
            sig,
            pending: VecDeque::new(),
            rejects: Vec::new(),
        })
    }

    fn is_valid(&self, item: &IngestItem) -> Result<bool, CoreError> {
        let record = item.expect_record(&self.sig.name)?;
        match &self.validity {
            Validity::InvalidWhen(pred) => Ok(!pred.matches(record)?),
            Validity::ValidValues(values) => {
                let v = record.get(&self.attr)?.canonical();
                Ok(values.contains(&v))
            }
        }
    }
}

impl Operator for SinglePassRepair {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            if self.is_valid(&item)? {
                self.pending
                    .push_back(item.with_label(&self.sig.name, "0")?);
                continue;
            }
            let record = item.expect_record(&self.sig.name)?.clone();
            let idx = record.schema.require(&self.attr)?;
            let current = record.values[idx].canonical();
            match self.dict.get(&current) {
                Some(replacement) => {
                    let ty = record.schema.attributes[idx].1;
                    let new_value = Value::parse_as(ty, replacement).ok_or_else(|| {
                        CoreError::BadParam {
                            name: format!("{}.dict", self.sig.name),
                            reason: format!("`{replacement}` is not a {}", ty.name()),
                        }
                    })?;
                    let mut values = record.values.clone();
                    values[idx] = new_value;
                    let repaired = item
                        .map_payload(Payload::Record(crate::item::Record::new(
                            record.schema.clone(),
                            values,
                        )))
                        .with_label(&self.sig.name, "1")?;
                    self.pending.push_back(repaired);
                }
                None => {
                    // No repair known: drop to the reject channel.
                    self.rejects.push(ViolationRecord {
                        rule: self.sig.name.clone(),
                        reason: format!("no dictionary entry for {} = {current}", self.attr),
                        raw: None,
                        record: Some(record),
                    });
                }
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

    fn take_rejects(&mut self) -> Vec<ViolationRecord> {
        std::mem::take(&mut self.rejects)
    }
}
