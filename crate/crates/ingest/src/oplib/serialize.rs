//! Block serialization into the container format.

use std::collections::VecDeque;

use crate::item::{CoreError, IngestItem, Payload};
use crate::layout::{encode_block, EncodeOptions, LayoutId};
use crate::op::{Operator, OpSignature};
use crate::plan::OpSpec;

pub struct SerializeBlock {
    sig: OpSignature,
    layout: LayoutId,
    opts: EncodeOptions,
    pending: VecDeque<IngestItem>,
}

impl SerializeBlock {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        let layout = LayoutId::parse_name(spec.str("layout").unwrap_or_default())
            .ok_or_else(|| CoreError::BadParam {
                name: format!("{}.layout", spec.instance),
                reason: "unknown layout".into(),
            })?;
        let col_groups = spec.str("groups").map(|raw| {
            raw.split(';')
                .map(|g| super::comma_list(g))
                .filter(|g| !g.is_empty())
                .collect::<Vec<_>>()
        });
        let opts = EncodeOptions {
            sort_key: spec.str("key").map(str::to_string),
            row_groups: spec.int("row_groups").map(|v| v.max(1) as usize),
            col_groups,
        };
        Ok(SerializeBlock {
            sig,
            layout,
            opts,
            pending: VecDeque::new(),
        })
    }
}

impl Operator for SerializeBlock {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let block = item.expect_block(&self.sig.name)?;
            let bytes = encode_block(block, self.layout, &self.opts).map_err(|e| {
                CoreError::OperatorFailure {
                    op: self.sig.name.clone(),
                    reason: e.to_string(),
                }
            })?;
            let out = item
                .map_payload(Payload::Serialized(bytes))
                .with_label(&self.sig.name, self.layout.name())?;
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
