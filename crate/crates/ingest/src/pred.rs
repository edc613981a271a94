//! Record predicates: conjunctions of attribute/literal comparisons.
//! Shared by the scope filter, constraint checks, repair rules and
//! access-time pushdown selection.

use serde::{Deserialize, Serialize};

use crate::item::{CoreError, Record, Value};
use crate::plan::Cmp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub attr: String,
    pub cmp: Cmp,
    pub literal: Value,
}

/// Conjunction of comparisons; the only predicate form the engine supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub conjuncts: Vec<Comparison>,
}

impl Predicate {
    /// Parses `attr < 3 AND other >= "x"`. Literal syntax: integers, floats,
    /// double-quoted strings, dates as quoted `YYYY-MM-DD`.
    pub fn parse(text: &str) -> Result<Predicate, CoreError> {
        let mut conjuncts = Vec::new();
        for part in split_and(text) {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            conjuncts.push(parse_comparison(part)?);
        }
        if conjuncts.is_empty() {
            return Err(CoreError::BadParam {
                name: "predicate".into(),
                reason: format!("no comparisons in `{text}`"),
            });
        }
        Ok(Predicate { conjuncts })
    }

    pub fn attrs(&self) -> Vec<String> {
        self.conjuncts.iter().map(|c| c.attr.clone()).collect()
    }

    pub fn matches(&self, record: &Record) -> Result<bool, CoreError> {
        for c in &self.conjuncts {
            let actual = record.get(&c.attr)?;
            // Dates in predicates arrive as strings; coerce for comparison.
            let lit = match (actual, &c.literal) {
                (Value::Date(_), Value::Str(s)) => match crate::item::date_string_to_days(s) {
                    Some(d) => Value::Date(d),
                    None => c.literal.clone(),
                },
                _ => c.literal.clone(),
            };
            let Some(ord) = actual.compare(&lit) else {
                return Ok(false);
            };
            if !c.cmp.eval_ordering(ord) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn render(&self) -> String {
        self.conjuncts
            .iter()
            .map(|c| {
                let lit = match &c.literal {
                    Value::Str(s) => format!("\"{s}\""),
                    other => other.canonical(),
                };
                format!("{} {} {}", c.attr, c.cmp.symbol(), lit)
            })
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

fn split_and(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut rest = text;
    loop {
        let lower = rest.to_ascii_lowercase();
        match lower.find(" and ") {
            Some(idx) => {
                parts.push(&rest[..idx]);
                rest = &rest[idx + 5..];
            }
            None => {
                parts.push(rest);
                return parts;
            }
        }
    }
}

fn parse_comparison(text: &str) -> Result<Comparison, CoreError> {
    // Two-character operators first.
    for (sym, cmp) in [
        ("!=", Cmp::Ne),
        ("<=", Cmp::Le),
        (">=", Cmp::Ge),
        ("<", Cmp::Lt),
        (">", Cmp::Gt),
        ("=", Cmp::Eq),
    ] {
        if let Some(idx) = text.find(sym) {
            let attr = text[..idx].trim();
            let lit = text[idx + sym.len()..].trim();
            if attr.is_empty() || lit.is_empty() {
                break;
            }
            return Ok(Comparison {
                attr: attr.to_string(),
                cmp,
                literal: parse_literal(lit),
            });
        }
    }
    Err(CoreError::BadParam {
        name: "predicate".into(),
        reason: format!("`{text}` is not attr <cmp> literal"),
    })
}

fn parse_literal(text: &str) -> Value {
    if let Some(stripped) = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
        return Value::Str(stripped.to_string());
    }
    if let Ok(v) = text.parse::<i64>() {
        return Value::Int(v);
    }
    if let Ok(v) = text.parse::<f64>() {
        return Value::Float(v);
    }
    Value::Str(text.to_string())
}
