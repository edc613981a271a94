//! Serialized block container format and the layout codecs.
//!
//! Container (little-endian): magic `IGB1` | layout id (u8) | schema hash
//! (u64) | row count (u32) | column count (u16) | layout-specific section.
//! Every serializer is inverted exactly by its deserializer; the columnar
//! layouts additionally support projection/selection pushdown that reads
//! only the byte runs it needs.

pub mod compress;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item::{Block, FieldType, Record, Schema, Value};
use crate::plan::Cmp;
use crate::pred::Predicate;

pub const MAGIC: &[u8; 4] = b"IGB1";
pub const HEADER_LEN: usize = 4 + 1 + 8 + 4 + 2;
/// Sparse index stride for the sorted-row layout.
pub const SORT_INDEX_STRIDE: usize = 64;
/// Default row-group count for the RCFile-like layout.
pub const DEFAULT_ROW_GROUPS: usize = 4;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("bad magic: not a serialized block")]
    BadMagic,
    #[error("schema mismatch: block was written with a different schema")]
    SchemaMismatch,
    #[error("unknown layout id {0}")]
    UnknownLayout(u8),
    #[error("unsupported type for layout {layout}: {reason}")]
    UnsupportedType { layout: String, reason: String },
    #[error("corrupt block: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutId {
    StringRows,
    BinaryRow,
    SortedRow,
    Pax,
    RcFileLike,
    ColumnGroup,
    CompressedPax,
}

impl LayoutId {
    pub fn code(self) -> u8 {
        match self {
            LayoutId::StringRows => 1,
            LayoutId::BinaryRow => 2,
            LayoutId::SortedRow => 3,
            LayoutId::Pax => 4,
            LayoutId::RcFileLike => 5,
            LayoutId::ColumnGroup => 6,
            LayoutId::CompressedPax => 7,
        }
    }

    pub fn from_code(code: u8) -> Option<LayoutId> {
        Some(match code {
            1 => LayoutId::StringRows,
            2 => LayoutId::BinaryRow,
            3 => LayoutId::SortedRow,
            4 => LayoutId::Pax,
            5 => LayoutId::RcFileLike,
            6 => LayoutId::ColumnGroup,
            7 => LayoutId::CompressedPax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayoutId::StringRows => "string_rows",
            LayoutId::BinaryRow => "binary_row",
            LayoutId::SortedRow => "sorted_row",
            LayoutId::Pax => "pax",
            LayoutId::RcFileLike => "rcfile",
            LayoutId::ColumnGroup => "column_group",
            LayoutId::CompressedPax => "compressed_pax",
        }
    }

    pub fn parse_name(s: &str) -> Option<LayoutId> {
        Some(match s {
            "string_rows" => LayoutId::StringRows,
            "binary_row" => LayoutId::BinaryRow,
            "sorted_row" => LayoutId::SortedRow,
            "pax" => LayoutId::Pax,
            "rcfile" => LayoutId::RcFileLike,
            "column_group" => LayoutId::ColumnGroup,
            "compressed_pax" => LayoutId::CompressedPax,
            _ => return None,
        })
    }
}

/// I/O accounting for ingestion-aware access.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IoStats {
    pub blocks_opened: u64,
    pub bytes_read: u64,
    pub rows_emitted: u64,
    pub rows_scanned: u64,
    pub shuffle_bytes: u64,
}

impl IoStats {
    pub fn merge(&mut self, other: &IoStats) {
        self.blocks_opened += other.blocks_opened;
        self.bytes_read += other.bytes_read;
        self.rows_emitted += other.rows_emitted;
        self.rows_scanned += other.rows_scanned;
        self.shuffle_bytes += other.shuffle_bytes;
    }
}

#[derive(Debug, Clone, Default)]
pub struct EncodeOptions {
    /// Sort key attribute for the sorted-row layout.
    pub sort_key: Option<String>,
    /// Row-group count for the RCFile-like layout.
    pub row_groups: Option<usize>,
    /// Column grouping for the column-group layout, as attribute name
    /// groups; ungrouped columns become singleton groups.
    pub col_groups: Option<Vec<Vec<String>>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn get_u16(b: &[u8], at: usize) -> Result<u16, LayoutError> {
    Ok(u16::from_le_bytes(
        b.get(at..at + 2)
            .ok_or_else(|| LayoutError::Corrupt("truncated u16".into()))?
            .try_into()
            .unwrap(),
    ))
}

fn get_u32(b: &[u8], at: usize) -> Result<u32, LayoutError> {
    Ok(u32::from_le_bytes(
        b.get(at..at + 4)
            .ok_or_else(|| LayoutError::Corrupt("truncated u32".into()))?
            .try_into()
            .unwrap(),
    ))
}

fn get_u64(b: &[u8], at: usize) -> Result<u64, LayoutError> {
    Ok(u64::from_le_bytes(
        b.get(at..at + 8)
            .ok_or_else(|| LayoutError::Corrupt("truncated u64".into()))?
            .try_into()
            .unwrap(),
    ))
}

fn encode_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Int(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::Float(x) => out.extend_from_slice(&x.to_bits().to_le_bytes()),
        Value::Date(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::Str(s) => {
            put_u32(out, s.len() as u32);
            out.extend_from_slice(s.as_bytes());
        }
    }
}

fn decode_value(b: &[u8], at: &mut usize, ty: FieldType) -> Result<Value, LayoutError> {
    match ty {
        FieldType::Int64 => {
            let v = get_u64(b, *at)? as i64;
            *at += 8;
            Ok(Value::Int(v))
        }
        FieldType::Float64 => {
            let v = f64::from_bits(get_u64(b, *at)?);
            *at += 8;
            Ok(Value::Float(v))
        }
        FieldType::Date => {
            let v = get_u64(b, *at)? as i64;
            *at += 8;
            Ok(Value::Date(v))
        }
        FieldType::Str => {
            let len = get_u32(b, *at)? as usize;
            *at += 4;
            let bytes = b
                .get(*at..*at + len)
                .ok_or_else(|| LayoutError::Corrupt("truncated string".into()))?;
            *at += len;
            Ok(Value::Str(
                String::from_utf8(bytes.to_vec())
                    .map_err(|_| LayoutError::Corrupt("invalid utf-8".into()))?,
            ))
        }
    }
}

fn encode_row(out: &mut Vec<u8>, record: &Record) {
    for v in &record.values {
        encode_value(out, v);
    }
}

fn decode_row(
    b: &[u8],
    at: &mut usize,
    schema: &Schema,
) -> Result<Vec<Value>, LayoutError> {
    let mut values = Vec::with_capacity(schema.attributes.len());
    for (_, ty) in &schema.attributes {
        values.push(decode_value(b, at, *ty)?);
    }
    Ok(values)
}

/// Percent-escapes `%`, `|` and newlines so string-rows lines stay parseable.
fn escape_field(s: &str) -> String {
    if !s.contains(['%', '|', '\n', '\r']) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> Result<String, LayoutError> {
    if !s.contains('%') {
        return Ok(s.to_string());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = bytes
                .get(i + 1..i + 3)
                .ok_or_else(|| LayoutError::Corrupt("truncated escape".into()))?;
            let v = u8::from_str_radix(std::str::from_utf8(hex).unwrap_or("zz"), 16)
                .map_err(|_| LayoutError::Corrupt("bad escape".into()))?;
            out.push(v);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| LayoutError::Corrupt("invalid utf-8".into()))
}

/// Serializes one block into the container format.
pub fn encode_block(
    block: &Block,
    layout: LayoutId,
    opts: &EncodeOptions,
) -> Result<Vec<u8>, LayoutError> {
    let schema = &block.schema;
    let n_cols = schema.attributes.len();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(layout.code());
    put_u64(&mut out, schema.fingerprint());
    put_u32(&mut out, block.records.len() as u32);
    out.extend_from_slice(&(n_cols as u16).to_le_bytes());

    match layout {
        LayoutId::StringRows => {
            let mut text = String::new();
            for (i, r) in block.records.iter().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                let line = r
                    .values
                    .iter()
                    .map(|v| escape_field(&v.canonical()))
                    .collect::<Vec<_>>()
                    .join("|");
                text.push_str(&line);
            }
            out.extend_from_slice(text.as_bytes());
        }
        LayoutId::BinaryRow => {
            for r in &block.records {
                encode_row(&mut out, r);
            }
        }
        LayoutId::SortedRow => {
            let key = opts.sort_key.as_deref().ok_or_else(|| {
                LayoutError::UnsupportedType {
                    layout: "sorted_row".into(),
                    reason: "missing sort key".into(),
                }
            })?;
            let key_idx = schema.index_of(key).ok_or_else(|| LayoutError::UnsupportedType {
                layout: "sorted_row".into(),
                reason: format!("sort key {key} not in schema"),
            })?;
            let mut rows: Vec<&Record> = block.records.iter().collect();
            rows.sort_by(|a, b| {
                a.values[key_idx]
                    .compare(&b.values[key_idx])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            out.extend_from_slice(&(key_idx as u16).to_le_bytes());
            let mut rows_bytes = Vec::new();
            let mut index = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                if i % SORT_INDEX_STRIDE == 0 {
                    index.push((i as u32, r.values[key_idx].clone(), rows_bytes.len() as u64));
                }
                encode_row(&mut rows_bytes, r);
            }
            out.extend_from_slice(&rows_bytes);
            let mut footer = Vec::new();
            put_u32(&mut footer, index.len() as u32);
            for (row, key_val, offset) in index {
                put_u32(&mut footer, row);
                encode_value(&mut footer, &key_val);
                put_u64(&mut footer, offset);
            }
            let footer_len = footer.len() as u64;
            out.extend_from_slice(&footer);
            put_u64(&mut out, footer_len);
        }
        LayoutId::Pax => {
            out.extend_from_slice(&encode_pax_section(block));
        }
        LayoutId::RcFileLike => {
            let n_groups = opts.row_groups.unwrap_or(DEFAULT_ROW_GROUPS).max(1);
            let n_rows = block.records.len();
            let per_group = n_rows.div_ceil(n_groups).max(1);
            let groups: Vec<&[Record]> = block.records.chunks(per_group).collect();
            out.extend_from_slice(&(groups.len() as u16).to_le_bytes());
            let mut blobs = Vec::new();
            for g in &groups {
                let mut blob = Vec::new();
                put_u32(&mut blob, g.len() as u32);
                blob.extend_from_slice(&encode_column_runs(schema, g));
                blobs.push(blob);
            }
            let mut offset = 0u64;
            for blob in &blobs {
                put_u64(&mut out, offset);
                put_u64(&mut out, blob.len() as u64);
                offset += blob.len() as u64;
            }
            for blob in &blobs {
                out.extend_from_slice(blob);
            }
        }
        LayoutId::ColumnGroup => {
            let groups = resolve_col_groups(schema, opts)?;
            out.extend_from_slice(&(groups.len() as u16).to_le_bytes());
            for g in &groups {
                out.extend_from_slice(&(g.len() as u16).to_le_bytes());
                for &col in g {
                    out.extend_from_slice(&(col as u16).to_le_bytes());
                }
            }
            let mut blobs = Vec::new();
            for g in &groups {
                let mut blob = Vec::new();
                for r in &block.records {
                    for &col in g {
                        encode_value(&mut blob, &r.values[col]);
                    }
                }
                blobs.push(blob);
            }
            let mut offset = 0u64;
            for blob in &blobs {
                put_u64(&mut out, offset);
                put_u64(&mut out, blob.len() as u64);
                offset += blob.len() as u64;
            }
            for blob in &blobs {
                out.extend_from_slice(blob);
            }
        }
        LayoutId::CompressedPax => {
            let section = encode_pax_section(block);
            out.push(compress::COMPRESSOR_LZS);
            put_u64(&mut out, section.len() as u64);
            out.extend_from_slice(&compress::compress(&section));
        }
    }
    Ok(out)
}

/// Column table (offset/len per column, relative to the data region that
/// starts right after the table) followed by the column byte runs.
fn encode_pax_section(block: &Block) -> Vec<u8> {
    let runs = column_runs(&block.schema, &block.records);
    let mut out = Vec::new();
    let mut offset = 0u64;
    for run in &runs {
        put_u64(&mut out, offset);
        put_u64(&mut out, run.len() as u64);
        offset += run.len() as u64;
    }
    for run in &runs {
        out.extend_from_slice(run);
    }
    out
}

fn encode_column_runs(schema: &Schema, records: &[Record]) -> Vec<u8> {
    let runs = column_runs(schema, records);
    let mut out = Vec::new();
    let mut offset = 0u64;
    for run in &runs {
        put_u64(&mut out, offset);
        put_u64(&mut out, run.len() as u64);
        offset += run.len() as u64;
    }
    for run in &runs {
        out.extend_from_slice(run);
    }
    out
}

fn column_runs(schema: &Schema, records: &[Record]) -> Vec<Vec<u8>> {
    (0..schema.attributes.len())
        .map(|col| {
            let mut run = Vec::new();
            for r in records {
                encode_value(&mut run, &r.values[col]);
            }
            run
        })
        .collect()
}

fn resolve_col_groups(
    schema: &Schema,
    opts: &EncodeOptions,
) -> Result<Vec<Vec<usize>>, LayoutError> {
    let mut assigned = vec![false; schema.attributes.len()];
    let mut groups = Vec::new();
    if let Some(spec) = &opts.col_groups {
        for g in spec {
            let mut idxs = Vec::new();
            for attr in g {
                let idx = schema.index_of(attr).ok_or_else(|| LayoutError::UnsupportedType {
                    layout: "column_group".into(),
                    reason: format!("grouped attribute {attr} not in schema"),
                })?;
                assigned[idx] = true;
                idxs.push(idx);
            }
            if !idxs.is_empty() {
                groups.push(idxs);
            }
        }
    }
    for (idx, done) in assigned.iter().enumerate() {
        if !done {
            groups.push(vec![idx]);
        }
    }
    Ok(groups)
}

/// Parsed container header.
pub struct BlockHeader {
    pub layout: LayoutId,
    pub schema_hash: u64,
    pub rows: usize,
    pub cols: usize,
}

pub fn read_header(bytes: &[u8]) -> Result<BlockHeader, LayoutError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(LayoutError::BadMagic);
    }
    let layout = LayoutId::from_code(bytes[4]).ok_or(LayoutError::UnknownLayout(bytes[4]))?;
    Ok(BlockHeader {
        layout,
        schema_hash: get_u64(bytes, 5)?,
        rows: get_u32(bytes, 13)? as usize,
        cols: get_u16(bytes, 17)? as usize,
    })
}

/// Deserializes a block, pushing projection and selection down into the
/// byte-range reads where the layout allows. Output equals filter-then-
/// project applied to a full deserialization; `stats.bytes_read` reflects
/// the bytes actually touched.
pub fn decode_block(
    bytes: &[u8],
    schema: &Arc<Schema>,
    projection: Option<&[String]>,
    selection: Option<&Predicate>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    let header = read_header(bytes)?;
    if header.schema_hash != schema.fingerprint() || header.cols != schema.attributes.len() {
        return Err(LayoutError::SchemaMismatch);
    }
    stats.blocks_opened += 1;
    stats.bytes_read += HEADER_LEN as u64;
    let section = &bytes[HEADER_LEN..];

    // Columns that must be materialized: projection plus selection attrs.
    let needed: Option<Vec<usize>> = match projection {
        None => None,
        Some(attrs) => {
            let mut cols = Vec::new();
            for a in attrs {
                cols.push(schema.index_of(a).ok_or(LayoutError::SchemaMismatch)?);
            }
            if let Some(sel) = selection {
                for a in sel.attrs() {
                    let idx = schema.index_of(&a).ok_or(LayoutError::SchemaMismatch)?;
                    if !cols.contains(&idx) {
                        cols.push(idx);
                    }
                }
            }
            Some(cols)
        }
    };

    let full = match header.layout {
        LayoutId::StringRows => {
            stats.bytes_read += section.len() as u64;
            decode_string_rows(section, schema, header.rows)?
        }
        LayoutId::BinaryRow => {
            stats.bytes_read += section.len() as u64;
            let mut at = 0;
            let mut rows = Vec::with_capacity(header.rows);
            for _ in 0..header.rows {
                rows.push(Record::new(schema.clone(), decode_row(section, &mut at, schema)?));
            }
            rows
        }
        LayoutId::SortedRow => {
            return decode_sorted_rows(section, schema, header.rows, projection, selection, stats);
        }
        LayoutId::Pax => decode_pax_section(section, schema, header.rows, needed.as_deref(), stats)?,
        LayoutId::RcFileLike => {
            decode_rcfile(section, schema, needed.as_deref(), stats)?
        }
        LayoutId::ColumnGroup => decode_column_group(section, schema, header.rows, needed.as_deref(), stats)?,
        LayoutId::CompressedPax => {
            if section.is_empty() {
                return Err(LayoutError::Corrupt("missing compressor id".into()));
            }
            if section[0] != compress::COMPRESSOR_LZS {
                return Err(LayoutError::Corrupt(format!(
                    "unknown compressor id {}",
                    section[0]
                )));
            }
            let raw_len = get_u64(section, 1)? as usize;
            stats.bytes_read += section.len() as u64;
            let raw = compress::decompress(&section[9..], raw_len)
                .ok_or_else(|| LayoutError::Corrupt("decompression failed".into()))?;
            let mut inner_stats = IoStats::default();
            decode_pax_section(&raw, schema, header.rows, needed.as_deref(), &mut inner_stats)?
        }
    };

    finish_rows(full, schema, projection, selection, stats)
}

/// Applies selection then projection and counts emitted rows.
fn finish_rows(
    rows: Vec<Record>,
    schema: &Arc<Schema>,
    projection: Option<&[String]>,
    selection: Option<&Predicate>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    stats.rows_scanned += rows.len() as u64;
    let mut out = Vec::new();
    let proj_schema = match projection {
        Some(attrs) => Some(Arc::new(
            schema
                .project(&attrs.to_vec())
                .map_err(|_| LayoutError::SchemaMismatch)?,
        )),
        None => None,
    };
    for r in rows {
        if let Some(sel) = selection {
            if !sel.matches(&r).map_err(|_| LayoutError::SchemaMismatch)? {
                continue;
            }
        }
        let rec = match (&proj_schema, projection) {
            (Some(ps), Some(attrs)) => {
                let values = attrs
                    .iter()
                    .map(|a| r.get(a).cloned().map_err(|_| LayoutError::SchemaMismatch))
                    .collect::<Result<Vec<_>, _>>()?;
                Record::new(ps.clone(), values)
            }
            _ => r,
        };
        out.push(rec);
    }
    stats.rows_emitted += out.len() as u64;
    Ok(out)
}

fn decode_string_rows(
    section: &[u8],
    schema: &Arc<Schema>,
    rows: usize,
) -> Result<Vec<Record>, LayoutError> {
    if rows == 0 {
        return Ok(Vec::new());
    }
    let text = std::str::from_utf8(section)
        .map_err(|_| LayoutError::Corrupt("invalid utf-8".into()))?;
    let mut out = Vec::with_capacity(rows);
    for line in text.split('\n').take(rows) {
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != schema.attributes.len() {
            return Err(LayoutError::Corrupt(format!(
                "row has {} fields, schema has {}",
                fields.len(),
                schema.attributes.len()
            )));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, (_, ty)) in fields.iter().zip(&schema.attributes) {
            let raw = unescape_field(field)?;
            let v = Value::parse_as(*ty, &raw)
                .ok_or_else(|| LayoutError::Corrupt(format!("bad field `{raw}`")))?;
            values.push(v);
        }
        out.push(Record::new(schema.clone(), values));
    }
    if out.len() != rows {
        return Err(LayoutError::Corrupt("row count mismatch".into()));
    }
    Ok(out)
}

fn decode_pax_section(
    section: &[u8],
    schema: &Arc<Schema>,
    rows: usize,
    needed: Option<&[usize]>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    let n_cols = schema.attributes.len();
    let table_len = 16 * n_cols;
    stats.bytes_read += table_len as u64;
    let data = section
        .get(table_len..)
        .ok_or_else(|| LayoutError::Corrupt("truncated column table".into()))?;
    let mut columns: Vec<Option<Vec<Value>>> = vec![None; n_cols];
    for col in 0..n_cols {
        let read = match needed {
            None => true,
            Some(cols) => cols.contains(&col),
        };
        if !read {
            continue;
        }
        let offset = get_u64(section, col * 16)? as usize;
        let len = get_u64(section, col * 16 + 8)? as usize;
        let run = data
            .get(offset..offset + len)
            .ok_or_else(|| LayoutError::Corrupt("column run out of bounds".into()))?;
        stats.bytes_read += len as u64;
        let ty = schema.attributes[col].1;
        let mut at = 0;
        let mut vals = Vec::with_capacity(rows);
        for _ in 0..rows {
            vals.push(decode_value(run, &mut at, ty)?);
        }
        columns[col] = Some(vals);
    }
    assemble_rows(schema, rows, columns)
}

/// Builds records from per-column vectors; unread columns are filled with
/// type defaults (they are never observed: projection drops them).
fn assemble_rows(
    schema: &Arc<Schema>,
    rows: usize,
    columns: Vec<Option<Vec<Value>>>,
) -> Result<Vec<Record>, LayoutError> {
    let defaults: Vec<Value> = schema
        .attributes
        .iter()
        .map(|(_, ty)| match ty {
            FieldType::Int64 => Value::Int(0),
            FieldType::Float64 => Value::Float(0.0),
            FieldType::Date => Value::Date(0),
            FieldType::Str => Value::Str(String::new()),
        })
        .collect();
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let values = columns
            .iter()
            .enumerate()
            .map(|(col, c)| match c {
                Some(vals) => vals[row].clone(),
                None => defaults[col].clone(),
            })
            .collect();
        out.push(Record::new(schema.clone(), values));
    }
    Ok(out)
}

fn decode_rcfile(
    section: &[u8],
    schema: &Arc<Schema>,
    needed: Option<&[usize]>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    let n_groups = get_u16(section, 0)? as usize;
    stats.bytes_read += 2;
    let dir_at = 2;
    let dir_len = n_groups * 16;
    stats.bytes_read += dir_len as u64;
    let data = section
        .get(dir_at + dir_len..)
        .ok_or_else(|| LayoutError::Corrupt("truncated group directory".into()))?;
    let mut out = Vec::new();
    for g in 0..n_groups {
        let offset = get_u64(section, dir_at + g * 16)? as usize;
        let len = get_u64(section, dir_at + g * 16 + 8)? as usize;
        let blob = data
            .get(offset..offset + len)
            .ok_or_else(|| LayoutError::Corrupt("group out of bounds".into()))?;
        let g_rows = get_u32(blob, 0)? as usize;
        stats.bytes_read += 4;
        let mut rows =
            decode_pax_section(&blob[4..], schema, g_rows, needed, stats)?;
        out.append(&mut rows);
    }
    Ok(out)
}

fn decode_column_group(
    section: &[u8],
    schema: &Arc<Schema>,
    rows: usize,
    needed: Option<&[usize]>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    let n_groups = get_u16(section, 0)? as usize;
    let mut at = 2;
    let mut memberships = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let n = get_u16(section, at)? as usize;
        at += 2;
        let mut cols = Vec::with_capacity(n);
        for _ in 0..n {
            cols.push(get_u16(section, at)? as usize);
            at += 2;
        }
        memberships.push(cols);
    }
    stats.bytes_read += at as u64 - 2 + 2;
    let dir_at = at;
    let dir_len = n_groups * 16;
    stats.bytes_read += dir_len as u64;
    let data = section
        .get(dir_at + dir_len..)
        .ok_or_else(|| LayoutError::Corrupt("truncated group directory".into()))?;

    let mut columns: Vec<Option<Vec<Value>>> = vec![None; schema.attributes.len()];
    for (g, cols) in memberships.iter().enumerate() {
        let wanted = match needed {
            None => true,
            Some(n) => cols.iter().any(|c| n.contains(c)),
        };
        if !wanted {
            continue;
        }
        let offset = get_u64(section, dir_at + g * 16)? as usize;
        let len = get_u64(section, dir_at + g * 16 + 8)? as usize;
        let blob = data
            .get(offset..offset + len)
            .ok_or_else(|| LayoutError::Corrupt("group out of bounds".into()))?;
        stats.bytes_read += len as u64;
        let mut vals: Vec<Vec<Value>> = cols.iter().map(|_| Vec::with_capacity(rows)).collect();
        let mut pos = 0;
        for _ in 0..rows {
            for (slot, &col) in cols.iter().enumerate() {
                let ty = schema.attributes[col].1;
                vals[slot].push(decode_value(blob, &mut pos, ty)?);
            }
        }
        for (slot, &col) in cols.iter().enumerate() {
            columns[col] = Some(std::mem::take(&mut vals[slot]));
        }
    }
    assemble_rows(schema, rows, columns)
}

fn decode_sorted_rows(
    section: &[u8],
    schema: &Arc<Schema>,
    rows: usize,
    projection: Option<&[String]>,
    selection: Option<&Predicate>,
    stats: &mut IoStats,
) -> Result<Vec<Record>, LayoutError> {
    let key_idx = get_u16(section, 0)? as usize;
    stats.bytes_read += 2 + 8;
    if section.len() < 10 {
        return Err(LayoutError::Corrupt("truncated sorted block".into()));
    }
    let footer_len = get_u64(section, section.len() - 8)? as usize;
    let rows_end = section
        .len()
        .checked_sub(8 + footer_len)
        .ok_or_else(|| LayoutError::Corrupt("bad footer length".into()))?;
    let rows_region = &section[2..rows_end];
    let footer = &section[rows_end..section.len() - 8];

    let key_attr = schema
        .attributes
        .get(key_idx)
        .ok_or_else(|| LayoutError::Corrupt("bad sort key index".into()))?
        .0
        .clone();
    let key_ty = schema.attributes[key_idx].1;

    // Key bounds from the selection, when it constrains the sort key.
    let mut eq_target: Option<Value> = None;
    let mut lower: Option<(Value, bool)> = None; // (bound, inclusive)
    let mut upper: Option<(Value, bool)> = None;
    if let Some(sel) = selection {
        for c in &sel.conjuncts {
            if c.attr != key_attr {
                continue;
            }
            let lit = coerce_literal(&c.literal, key_ty);
            match c.cmp {
                Cmp::Eq => eq_target = Some(lit),
                Cmp::Ge => lower = Some((lit, true)),
                Cmp::Gt => lower = Some((lit, false)),
                Cmp::Le => upper = Some((lit, true)),
                Cmp::Lt => upper = Some((lit, false)),
                Cmp::Ne => {}
            }
        }
    }
    if let Some(t) = &eq_target {
        lower = Some((t.clone(), true));
        upper = Some((t.clone(), true));
    }

    let use_index = lower.is_some() || upper.is_some();
    let start_offset = if use_index && lower.is_some() {
        stats.bytes_read += footer.len() as u64;
        let entries = parse_sort_footer(footer, key_ty)?;
        let bound = &lower.as_ref().unwrap().0;
        // Greatest indexed row whose key is <= the lower bound.
        let mut offset = 0u64;
        for (_, key, off) in &entries {
            match key.compare(bound) {
                Some(std::cmp::Ordering::Greater) => break,
                _ => offset = *off,
            }
        }
        offset as usize
    } else {
        0
    };

    let mut at = start_offset;
    let mut rows_out = Vec::new();
    let mut scanned = 0u64;
    let mut consumed = 0u64;
    while at < rows_region.len() && rows_out.len() < rows {
        let before = at;
        let values = decode_row(rows_region, &mut at, schema)?;
        consumed += (at - before) as u64;
        scanned += 1;
        let key_val = &values[key_idx];
        if let Some((bound, incl)) = &upper {
            match key_val.compare(bound) {
                Some(std::cmp::Ordering::Greater) => break,
                Some(std::cmp::Ordering::Equal) if !incl => break,
                _ => {}
            }
        }
        if let Some((bound, incl)) = &lower {
            let keep = match key_val.compare(bound) {
                Some(std::cmp::Ordering::Less) => false,
                Some(std::cmp::Ordering::Equal) => *incl,
                _ => true,
            };
            if !keep {
                continue;
            }
        }
        rows_out.push(Record::new(schema.clone(), values));
    }
    stats.bytes_read += consumed;
    stats.rows_scanned += scanned;

    // Selection re-applied in full (other conjuncts), projection last.
    let mut out = Vec::new();
    let proj_schema = match projection {
        Some(attrs) => Some(Arc::new(
            schema
                .project(&attrs.to_vec())
                .map_err(|_| LayoutError::SchemaMismatch)?,
        )),
        None => None,
    };
    for r in rows_out {
        if let Some(sel) = selection {
            if !sel.matches(&r).map_err(|_| LayoutError::SchemaMismatch)? {
                continue;
            }
        }
        let rec = match (&proj_schema, projection) {
            (Some(ps), Some(attrs)) => {
                let values = attrs
                    .iter()
                    .map(|a| r.get(a).cloned().map_err(|_| LayoutError::SchemaMismatch))
                    .collect::<Result<Vec<_>, _>>()?;
                Record::new(ps.clone(), values)
            }
            _ => r,
        };
        out.push(rec);
    }
    stats.rows_emitted += out.len() as u64;
    Ok(out)
}

fn coerce_literal(lit: &Value, ty: FieldType) -> Value {
    match (lit, ty) {
        (Value::Str(s), FieldType::Date) => crate::item::date_string_to_days(s)
            .map(Value::Date)
            .unwrap_or_else(|| lit.clone()),
        (Value::Int(v), FieldType::Float64) => Value::Float(*v as f64),
        _ => lit.clone(),
    }
}

fn parse_sort_footer(
    footer: &[u8],
    key_ty: FieldType,
) -> Result<Vec<(u32, Value, u64)>, LayoutError> {
    let count = get_u32(footer, 0)? as usize;
    let mut at = 4;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let row = get_u32(footer, at)?;
        at += 4;
        let key = decode_value(footer, &mut at, key_ty)?;
        let offset = get_u64(footer, at)?;
        at += 8;
        entries.push((row, key, offset));
    }
    Ok(entries)
}
