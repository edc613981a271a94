//! Operator registry: maps program-level operator names to builtin
//! implementations with default parameters. Loaded from a manifest of
//! lines `name = builtin_id(key=value, ...)`.

use std::collections::BTreeMap;

use crate::lang::ast::OpRef;
use crate::lang::LangError;
use crate::oplib;
use crate::plan::{OpSpec, ParamValue};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub builtin: String,
    pub defaults: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    pub entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    pub fn parse(text: &str) -> Result<Registry, LangError> {
        let mut entries = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |why: &str| LangError::SyntaxError {
                line: line_no as u32 + 1,
                col: 1,
                expected: why.to_string(),
                found: raw.trim().to_string(),
            };
            let (name, rest) = line.split_once('=').ok_or_else(|| err("name = builtin(...)"))?;
            let name = name.trim().to_string();
            let rest = rest.trim();
            let (builtin, params_text) = match rest.split_once('(') {
                Some((b, p)) => {
                    let p = p.strip_suffix(')').ok_or_else(|| err("closing `)`"))?;
                    (b.trim().to_string(), p.trim().to_string())
                }
                None => (rest.to_string(), String::new()),
            };
            if !oplib::is_builtin(&builtin) {
                return Err(LangError::UnknownOperator(builtin));
            }
            let mut defaults = BTreeMap::new();
            if !params_text.is_empty() {
                for pair in split_params(&params_text) {
                    let (key, value) = pair
                        .split_once('=')
                        .ok_or_else(|| err("key=value parameter"))?;
                    defaults.insert(key.trim().to_string(), parse_value(value.trim()));
                }
            }
            entries.insert(name, RegistryEntry { builtin, defaults });
        }
        Ok(Registry { entries })
    }

    /// Canonical manifest text; parse(render(r)) == r.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entry) in &self.entries {
            out.push_str(name);
            out.push_str(" = ");
            out.push_str(&entry.builtin);
            if !entry.defaults.is_empty() {
                out.push('(');
                let params: Vec<String> = entry
                    .defaults
                    .iter()
                    .map(|(k, v)| format!("{k}={}", v.render()))
                    .collect();
                out.push_str(&params.join(", "));
                out.push(')');
            }
            out.push('\n');
        }
        out
    }
}

/// Splits on commas not inside double quotes.
fn split_params(text: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for c in text.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                current.push(c);
            }
            ',' if !in_quotes => {
                if !current.trim().is_empty() {
                    parts.push(current.trim().to_string());
                }
                current.clear();
            }
            c => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        parts.push(current.trim().to_string());
    }
    parts
}

fn parse_value(text: &str) -> ParamValue {
    if let Some(stripped) = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
        return ParamValue::Str(stripped.to_string());
    }
    if let Ok(v) = text.parse::<i64>() {
        return ParamValue::Int(v);
    }
    if text.contains('.') {
        if let Ok(v) = text.parse::<f64>() {
            return ParamValue::Float(v);
        }
    }
    ParamValue::Str(text.to_string())
}

/// Resolves an operator reference to its base name and parameter-bound spec
/// (instance naming happens later, at compile time). Inline arguments
/// override manifest defaults positionally.
pub fn resolve_operator_ref(
    opref: &OpRef,
    registry: &Registry,
) -> Result<(String, OpSpec), LangError> {
    let (builtin, mut params) = match registry.entries.get(&opref.name) {
        Some(entry) => (entry.builtin.clone(), entry.defaults.clone()),
        None => match oplib::resolve_alias(&opref.name) {
            Some(builtin) => (builtin.to_string(), BTreeMap::new()),
            None => return Err(LangError::UnknownOperator(opref.name.clone())),
        },
    };
    let positions = oplib::positional_params(&builtin);
    if opref.args.len() > positions.len() {
        return Err(LangError::BadArity {
            op: opref.name.clone(),
            max: positions.len(),
            got: opref.args.len(),
        });
    }
    for (arg, key) in opref.args.iter().zip(positions) {
        params.insert(key.to_string(), arg.clone());
    }
    let mut spec = OpSpec::new("", builtin);
    spec.params = params;
    Ok((opref.name.clone(), spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::ast::Pos;

    fn opref(name: &str, args: Vec<ParamValue>) -> OpRef {
        OpRef {
            name: name.into(),
            args,
            pos: Pos::default(),
        }
    }

    #[test]
    fn parses_manifest_lines() {
        let text = r#"
            # log ingestion operators
            parser = csv_parse(delimiter="|", schema="ts:int64,msg:string")
            c100mb = chunk_by_size(max_bytes=104857600)
            hdfsStorage = store
        "#;
        let r = Registry::parse(text).unwrap();
        assert_eq!(r.entries.len(), 3);
        let parser = &r.entries["parser"];
        assert_eq!(parser.builtin, "csv_parse");
        assert_eq!(
            parser.defaults["delimiter"],
            ParamValue::Str("|".into())
        );
        assert_eq!(
            r.entries["c100mb"].defaults["max_bytes"],
            ParamValue::Int(104857600)
        );
    }

    #[test]
    fn manifest_round_trips_through_render() {
        let text = "a = chunk_by_size(max_bytes=1024)\nb = serialize(key=\"ts\", layout=\"pax\")\n";
        let r = Registry::parse(text).unwrap();
        let r2 = Registry::parse(&r.render()).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn manifest_entry_resolves_with_defaults() {
        let r = Registry::parse("c100mb = chunk_by_size(max_bytes=104857600)").unwrap();
        let (base, spec) = resolve_operator_ref(&opref("c100mb", vec![]), &r).unwrap();
        assert_eq!(base, "c100mb");
        assert_eq!(spec.builtin, "chunk_by_size");
        assert_eq!(spec.int("max_bytes"), Some(104857600));
    }

    #[test]
    fn inline_args_override_positionally() {
        let r = Registry::default();
        let (_, spec) =
            resolve_operator_ref(&opref("chunk", vec![ParamValue::Int(1024)]), &r).unwrap();
        assert_eq!(spec.builtin, "chunk_by_size");
        assert_eq!(spec.int("max_bytes"), Some(1024));
    }

    #[test]
    fn unknown_operator_and_bad_arity() {
        let r = Registry::default();
        assert!(matches!(
            resolve_operator_ref(&opref("nosuch", vec![]), &r),
            Err(LangError::UnknownOperator(_))
        ));
        let too_many = opref(
            "chunk",
            vec![ParamValue::Int(1), ParamValue::Int(2)],
        );
        assert!(matches!(
            resolve_operator_ref(&too_many, &r),
            Err(LangError::BadArity { .. })
        ));
    }

    #[test]
    fn unknown_builtin_in_manifest_is_rejected() {
        assert!(matches!(
            Registry::parse("x = frobnicate(a=1)"),
            Err(LangError::UnknownOperator(_))
        ));
    }
}
