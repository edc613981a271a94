//! Delimiter-separated file parsing into typed records.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::item::{CoreError, IngestItem, Payload, Record, Schema, Value, ViolationRecord};
use crate::op::{Operator, OpSignature, SchemaEffect};
use crate::plan::OpSpec;

pub struct CsvParse {
    sig: OpSignature,
    delimiter: char,
    schema: Arc<Schema>,
    pending: VecDeque<IngestItem>,
    rejects: Vec<ViolationRecord>,
    lines_seen: u64,
    records_out: u64,
}

impl CsvParse {
    pub fn new(spec: &OpSpec, sig: OpSignature) -> Result<Self, CoreError> {
        let delimiter = spec.str("delimiter").unwrap_or(",");
        let delimiter = delimiter.chars().next().ok_or_else(|| CoreError::BadParam {
            name: format!("{}.delimiter", spec.instance),
            reason: "empty delimiter".into(),
        })?;
        let schema = match &sig.schema_effect {
            SchemaEffect::Sets(s) => s.clone(),
            _ => unreachable!("csv_parse always sets a schema"),
        };
        Ok(CsvParse {
            sig,
            delimiter,
            schema,
            pending: VecDeque::new(),
            rejects: Vec::new(),
            lines_seen: 0,
            records_out: 0,
        })
    }

    fn parse_line(&self, line: &str) -> Result<Record, String> {
        let fields: Vec<&str> = line.split(self.delimiter).collect();
        if fields.len() != self.schema.attributes.len() {
            return Err(format!(
                "expected {} fields, got {}",
                self.schema.attributes.len(),
                fields.len()
            ));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, (attr, ty)) in fields.iter().zip(&self.schema.attributes) {
            match Value::parse_as(*ty, field) {
                Some(v) => values.push(v),
                None => return Err(format!("field {attr}: `{field}` is not {}", ty.name())),
            }
        }
        Ok(Record::new(self.schema.clone(), values))
    }
}

impl Operator for CsvParse {
    fn signature(&self) -> &OpSignature {
        &self.sig
    }

    fn set_input(&mut self, items: Vec<IngestItem>) -> Result<(), CoreError> {
        for item in items {
            let Payload::File(bytes) = item.payload() else {
                continue;
            };
            let text = String::from_utf8_lossy(bytes);
            // Line index restarts per input file.
            let mut line_idx: u64 = 0;
            for line in text.split('\n') {
                let line = line.strip_suffix('\r').unwrap_or(line);
                if line.is_empty() {
                    continue;
                }
                self.lines_seen += 1;
                match self.parse_line(line) {
                    Ok(record) => {
                        let out = item
                            .map_payload(Payload::Record(record))
                            .with_label(&self.sig.name, line_idx.to_string())?;
                        self.pending.push_back(out);
                        self.records_out += 1;
                    }
                    Err(reason) => self.rejects.push(ViolationRecord {
                        rule: self.sig.name.clone(),
                        reason,
                        raw: Some(line.to_string()),
                        record: None,
                    }),
                }
                line_idx += 1;
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
        if self.lines_seen > 0 && self.records_out == 0 {
            return Err(CoreError::SchemaArityMismatch);
        }
        Ok(Vec::new())
    }

    fn take_rejects(&mut self) -> Vec<ViolationRecord> {
        std::mem::take(&mut self.rejects)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::drain_operator;
    use crate::oplib::signature;
    use crate::plan::ParamValue;

    fn parse_spec(schema: &str) -> OpSpec {
        OpSpec::new("parse", "csv_parse")
            .with("delimiter", ParamValue::Str("|".into()))
            .with("schema", ParamValue::Str(schema.into()))
    }

    fn run(spec: &OpSpec, text: &str) -> (Vec<IngestItem>, Vec<ViolationRecord>) {
        let sig = signature(spec).unwrap();
        let mut op = CsvParse::new(spec, sig).unwrap();
        let out = drain_operator(&mut op, vec![IngestItem::file(text.as_bytes().to_vec())]).unwrap();
        let rejects = op.take_rejects();
        (out, rejects)
    }

    #[test]
    fn parses_lines_with_line_index_labels() {
        let spec = parse_spec("a:int64,b:string");
        let (out, rejects) = run(&spec, "1|x\n2|y\n3|z\n");
        assert_eq!(out.len(), 3);
        assert!(rejects.is_empty());
        for (i, item) in out.iter().enumerate() {
            assert_eq!(item.label("parse"), Some(i.to_string().as_str()));
        }
        let r = out[1].expect_record("t").unwrap();
        assert_eq!(r.values, vec![Value::Int(2), Value::Str("y".into())]);
    }

    #[test]
    fn malformed_line_goes_to_reject_channel() {
        let spec = parse_spec("a:int64,b:string");
        let (out, rejects) = run(&spec, "1|x\nx|y\n");
        assert_eq!(out.len(), 1);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].raw.as_deref(), Some("x|y"));
    }

    #[test]
    fn all_lines_failing_is_schema_arity_mismatch() {
        let spec = parse_spec("a:int64,b:string,c:int64");
        let sig = signature(&spec).unwrap();
        let mut op = CsvParse::new(&spec, sig).unwrap();
        let err = drain_operator(&mut op, vec![IngestItem::file(b"1|x\n2|y\n".to_vec())])
            .unwrap_err();
        assert!(matches!(err, CoreError::SchemaArityMismatch));
    }

    #[test]
    fn line_index_restarts_per_file() {
        let spec = parse_spec("a:int64");
        let sig = signature(&spec).unwrap();
        let mut op = CsvParse::new(&spec, sig).unwrap();
        let f0 = IngestItem::file(b"1\n2\n".to_vec()).with_label("input", "0").unwrap();
        let f1 = IngestItem::file(b"3\n".to_vec()).with_label("input", "1").unwrap();
        let out = drain_operator(&mut op, vec![f0, f1]).unwrap();
        assert_eq!(out[0].label("parse"), Some("0"));
        assert_eq!(out[1].label("parse"), Some("1"));
        assert_eq!(out[2].label("parse"), Some("0"));
        assert_eq!(out[2].label("input"), Some("1"));
    }
}
