//! Scope operators: row filtering and attribute projection.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::item::{CoreError, IngestItem, Payload, Record, Schema};
use crate::op::{Operator, OpSignature};
use crate::plan::OpSpec;
use crate::pred::Predicate;

pub struct ScopeFilter {
    sig: OpSignature,
    pred: Predicate,
    pending: VecDeque<IngestItem>,
}

impl ScopeFilter {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        let pred = Predicate::parse(spec.str("pred").unwrap_or_default())?;
        Ok(ScopeFilter {
            sig,
            pred,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for ScopeFilter {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let record = item.expect_record(&self.sig.name)?;
            if self.pred.matches(record)? {
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

pub struct ScopeProject {
    sig: OpSignature,
    attrs: Vec<String>,
    out_schema: Option<Arc<Schema>>,
    pending: VecDeque<IngestItem>,
}

impl ScopeProject {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        let attrs = super::comma_list(spec.str("attrs").unwrap_or_default());
        Ok(ScopeProject {
            sig,
            attrs,
            out_schema: None,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for ScopeProject {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let record = item.expect_record(&self.sig.name)?;
            if self.out_schema.is_none() {
                self.out_schema = Some(Arc::new(record.schema.project(&self.attrs)?));
            }
            let schema = self.out_schema.as_ref().unwrap().clone();
            let mut values = Vec::with_capacity(self.attrs.len());
            for attr in &self.attrs {
                values.push(record.get(attr)?.clone());
            }
            let out = item
                .map_payload(Payload::Record(Record::new(schema, values)))
                .with_label(&self.sig.name, "0")?;
            self.pending.push_back(out);
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
