//! Label-encoded filenames: a stored file's name is its lineage.
//!
//! Slot values are joined by `_` in canonical operator order; `_`, `/` and
//! `%` inside values are percent-encoded. A slot is empty when the item
//! carried no common value for that operator (not on its path, or the label
//! diverged at materialization).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NameError {
    #[error("malformed filename: {0}")]
    MalformedName(String),
}

pub fn encode_name(values: &[String]) -> String {
    values
        .iter()
        .map(|v| escape(v))
        .collect::<Vec<_>>()
        .join("_")
}

pub fn decode_name(name: &str) -> Result<Vec<String>, NameError> {
    name.split('_').map(unescape).collect()
}

fn escape(v: &str) -> String {
    if !v.contains(['_', '/', '%']) {
        return v.to_string();
    }
    let mut out = String::with_capacity(v.len() + 6);
    for c in v.chars() {
        match c {
            '%' => out.push_str("%25"),
            '_' => out.push_str("%5F"),
            '/' => out.push_str("%2F"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(v: &str) -> Result<String, NameError> {
    if !v.contains('%') {
        return Ok(v.to_string());
    }
    let bytes = v.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = bytes
                .get(i + 1..i + 3)
                .ok_or_else(|| NameError::MalformedName(v.to_string()))?;
            let byte = u8::from_str_radix(
                std::str::from_utf8(hex).map_err(|_| NameError::MalformedName(v.to_string()))?,
                16,
            )
            .map_err(|_| NameError::MalformedName(v.to_string()))?;
            out.push(byte);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| NameError::MalformedName(v.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joins_values_in_operator_order() {
        let labels: Vec<String> = ["p7", "r1", "h3", "f0", "pax", "L2", "u1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(encode_name(&labels), "p7_r1_h3_f0_pax_L2_u1");
        assert_eq!(decode_name("p7_r1_h3_f0_pax_L2_u1").unwrap(), labels);
    }

    #[test]
    fn escapes_separator_inside_values() {
        let labels = vec!["a_b".to_string()];
        let name = encode_name(&labels);
        assert_eq!(name, "a%5Fb");
        assert_eq!(decode_name(&name).unwrap(), labels);
    }

    #[test]
    fn empty_slots_survive_round_trip() {
        let labels = vec!["x".to_string(), String::new(), "y".to_string()];
        let name = encode_name(&labels);
        assert_eq!(name, "x__y");
        assert_eq!(decode_name(&name).unwrap(), labels);
    }

    #[test]
    fn malformed_escape_is_rejected() {
        assert!(decode_name("ab%zq").is_err());
        assert!(decode_name("ab%2").is_err());
    }
}
