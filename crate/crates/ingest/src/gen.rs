//! Deterministic test-data generation: TPC-H-flavoured tables at desk
//! scale, with controlled rule-violation injection and ground-truth
//! sidecars (the generator is its own oracle).
//!
//! String fields are fixed-width, so every record of a table has the same
//! encoded size; byte-exact storage arithmetic (chunk packing, erasure
//! overhead) stays exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::item::{date_string_to_days, days_to_date_string, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Table {
    Lineitem,
    Orders,
    Customer,
}

impl Table {
    pub fn parse(name: &str) -> Option<Table> {
        match name {
            "lineitem" => Some(Table::Lineitem),
            "orders" => Some(Table::Orders),
            "customer" => Some(Table::Customer),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Table::Lineitem => "lineitem",
            Table::Orders => "orders",
            Table::Customer => "customer",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub table: Table,
    pub rows: u64,
    pub seed: u64,
    /// Fraction of rows whose linestatus is flipped against the
    /// shipdate -> linestatus dependency.
    pub fd_rate: f64,
    /// Fraction of rows violating the quantity/discount denial constraint.
    pub dc_rate: f64,
    /// Number of part files; rows split contiguously.
    pub parts: usize,
    /// Key space for foreign keys (lineitem.orderkey, orders.custkey).
    pub key_space: u64,
}

impl GenSpec {
    pub fn new(table: Table, rows: u64, seed: u64) -> GenSpec {
        GenSpec {
            table,
            rows,
            seed,
            fd_rate: 0.0,
            dc_rate: 0.0,
            parts: 1,
            key_space: 5000,
        }
    }
}

/// Ground truth emitted next to the data.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenTruth {
    pub rows: u64,
    pub seed: u64,
    pub injected_dc: u64,
    pub injected_fd: u64,
    /// Primary keys (linenumber) of rows violating the denial constraint.
    pub dc_violations: Vec<i64>,
    /// Primary keys of rows the plurality rule flags per shipdate group.
    pub fd_violations: Vec<i64>,
    /// Value histograms for the low-cardinality string attributes.
    pub histograms: BTreeMap<String, BTreeMap<String, u64>>,
    /// Per part file: returnflag value counts (for local stratification).
    pub per_file_returnflag: Vec<BTreeMap<String, u64>>,
    pub files: Vec<String>,
    /// Encoded size of every record under the row-wise binary measure.
    pub record_bytes: usize,
}

pub const LINEITEM_SCHEMA: &str = "orderkey:int64,partkey:int64,suppkey:int64,linenumber:int64,quantity:int64,extendedprice:float64,discount:float64,tax:float64,returnflag:string,linestatus:string,shipdate:date,commitdate:date,receiptdate:date,shipinstruct:string,shipmode:string,comment:string";
pub const ORDERS_SCHEMA: &str = "orderkey:int64,custkey:int64,orderstatus:string,totalprice:float64,orderdate:date,orderpriority:string,clerk:string,shippriority:int64,comment:string";
pub const CUSTOMER_SCHEMA: &str = "custkey:int64,name:string,address:string,nationkey:int64,phone:string,acctbal:float64,mktsegment:string,comment:string";

pub fn table_schema(table: Table) -> Schema {
    let text = match table {
        Table::Lineitem => LINEITEM_SCHEMA,
        Table::Orders => ORDERS_SCHEMA,
        Table::Customer => CUSTOMER_SCHEMA,
    };
    Schema::parse(text).expect("table schemas are well-formed")
}

const SHIPINSTRUCT: [&str; 4] = ["DELIVERPERS", "COLLECTCOD ", "NONE       ", "TAKERETURN "];
const SHIPMODE: [&str; 4] = ["AIR ", "MAIL", "SHIP", "RAIL"];
const RETURNFLAG: [&str; 3] = ["R", "A", "N"];
const SEGMENTS: [&str; 5] = ["AUTOMOBILE", "BUILDING  ", "FURNITURE ", "MACHINERY ", "HOUSEHOLD "];
const PRIORITIES: [&str; 5] = ["1-URGENT ", "2-HIGH   ", "3-MEDIUM ", "4-NOTSPEC", "5-LOW    "];

fn fixed_comment(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 8] = ["alpha", "bravo", "delta", "gamma", "kappa", "omega", "sigma", "theta"];
    let a = WORDS[rng.gen_range(0..WORDS.len())];
    let b = WORDS[rng.gen_range(0..WORDS.len())];
    format!("{a:>8}.{b:<8}ok.")
}

/// One generated lineitem row plus its violation flags.
struct LineitemRow {
    fields: Vec<String>,
    shipdate_days: i64,
    linestatus: String,
    dc_violation: bool,
    returnflag: &'static str,
}

fn gen_lineitem_row(rng: &mut ChaCha8Rng, idx: u64, spec: &GenSpec) -> LineitemRow {
    let base_days = date_string_to_days("1992-01-01").unwrap();
    let orderkey = 1 + (rng.gen_range(0..spec.key_space)) as i64;
    let partkey = 1 + rng.gen_range(0..2000i64);
    let suppkey = 1 + rng.gen_range(0..100i64);
    let linenumber = idx as i64;
    let dc_violation = rng.gen_bool(spec.dc_rate);
    let (quantity, discount) = if dc_violation {
        // Quantity under 3 with a discount above 9%.
        (
            rng.gen_range(1..=2i64),
            [0.1, 0.11, 0.12, 0.13, 0.14, 0.15][rng.gen_range(0..6)],
        )
    } else {
        (
            rng.gen_range(3..=50i64),
            [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09][rng.gen_range(0..10)],
        )
    };
    let extendedprice = (quantity * 1000) as f64 + rng.gen_range(0..100) as f64;
    let tax = [0.0, 0.02, 0.04, 0.06, 0.08][rng.gen_range(0..5)];
    let returnflag = RETURNFLAG[rng.gen_range(0..3)];
    let shipdate_days = base_days + rng.gen_range(0..2466i64);
    // The dependency: shipdate in the first half ships F, later O.
    let pivot = base_days + 1233;
    let natural_status = if shipdate_days <= pivot { "F" } else { "O" };
    let flipped = rng.gen_bool(spec.fd_rate);
    let linestatus = if flipped {
        if natural_status == "F" {
            "O"
        } else {
            "F"
        }
    } else {
        natural_status
    };
    let commit = shipdate_days + rng.gen_range(1..30i64);
    let receipt = commit + rng.gen_range(1..30i64);
    let fields = vec![
        orderkey.to_string(),
        partkey.to_string(),
        suppkey.to_string(),
        linenumber.to_string(),
        quantity.to_string(),
        format!("{extendedprice:?}"),
        format!("{discount:?}"),
        format!("{tax:?}"),
        returnflag.to_string(),
        linestatus.to_string(),
        days_to_date_string(shipdate_days),
        days_to_date_string(commit),
        days_to_date_string(receipt),
        SHIPINSTRUCT[rng.gen_range(0..4)].to_string(),
        SHIPMODE[rng.gen_range(0..4)].to_string(),
        fixed_comment(rng),
    ];
    LineitemRow {
        fields,
        shipdate_days,
        linestatus: linestatus.to_string(),
        dc_violation,
        returnflag,
    }
}

fn gen_orders_row(rng: &mut ChaCha8Rng, idx: u64, spec: &GenSpec) -> Vec<String> {
    let base_days = date_string_to_days("1992-01-01").unwrap();
    vec![
        (idx as i64 + 1).to_string(),
        (1 + rng.gen_range(0..spec.key_space.max(1) / 10 + 1) as i64).to_string(),
        ["O", "F", "P"][rng.gen_range(0..3)].to_string(),
        format!("{:?}", rng.gen_range(1000..200_000) as f64 / 10.0),
        days_to_date_string(base_days + rng.gen_range(0..2400i64)),
        PRIORITIES[rng.gen_range(0..5)].to_string(),
        format!("Clerk#{:09}", rng.gen_range(0..1000)),
        "0".to_string(),
        fixed_comment(rng),
    ]
}

fn gen_customer_row(rng: &mut ChaCha8Rng, idx: u64) -> Vec<String> {
    vec![
        (idx as i64 + 1).to_string(),
        format!("Customer#{:09}", idx),
        format!("Addr-{:010}", rng.gen_range(0..1_000_000)),
        rng.gen_range(0..25i64).to_string(),
        format!("{:02}-{:03}-{:03}-{:04}", rng.gen_range(10..35), rng.gen_range(100..999), rng.gen_range(100..999), rng.gen_range(1000..9999)),
        format!("{:?}", rng.gen_range(-999..9999) as f64 / 1.0),
        SEGMENTS[rng.gen_range(0..5)].to_string(),
        fixed_comment(rng),
    ]
}

fn record_encoded_size(schema: &Schema, fields: &[String]) -> usize {
    schema
        .attributes
        .iter()
        .zip(fields)
        .map(|((_, ty), field)| match ty {
            crate::item::FieldType::Str => 4 + field.len(),
            _ => 8,
        })
        .sum()
}

/// Generates a table and its truth sidecar. Same spec, byte-identical
/// output.
pub fn gen_data(spec: &GenSpec, out: &Path) -> Result<GenTruth, std::io::Error> {
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let schema = table_schema(spec.table);
    let mut truth = GenTruth {
        rows: spec.rows,
        seed: spec.seed,
        ..Default::default()
    };

    let parts = spec.parts.max(1);
    let rows_per_part = (spec.rows as usize).div_ceil(parts).max(1);
    let mut writers: Vec<std::io::BufWriter<std::fs::File>> = Vec::new();
    for p in 0..parts {
        let path = out.join(format!("{}-part-{p:05}.tbl", spec.table.name()));
        truth.files.push(path.to_string_lossy().to_string());
        truth.per_file_returnflag.push(BTreeMap::new());
        writers.push(std::io::BufWriter::new(std::fs::File::create(path)?));
    }

    // shipdate group -> linestatus counts, for the FD oracle.
    let mut fd_groups: BTreeMap<i64, BTreeMap<String, u64>> = BTreeMap::new();
    let mut fd_rows: Vec<(i64, i64, String)> = Vec::new(); // (linenumber, shipdate, status)
    let mut histograms: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();

    for idx in 0..spec.rows {
        let part = (idx as usize) / rows_per_part;
        let part = part.min(parts - 1);
        let fields = match spec.table {
            Table::Lineitem => {
                let row = gen_lineitem_row(&mut rng, idx, spec);
                if row.dc_violation {
                    truth.injected_dc += 1;
                    truth.dc_violations.push(idx as i64);
                }
                *fd_groups
                    .entry(row.shipdate_days)
                    .or_default()
                    .entry(row.linestatus.clone())
                    .or_insert(0) += 1;
                fd_rows.push((idx as i64, row.shipdate_days, row.linestatus.clone()));
                *histograms
                    .entry("returnflag".into())
                    .or_default()
                    .entry(row.returnflag.to_string())
                    .or_insert(0) += 1;
                *histograms
                    .entry("linestatus".into())
                    .or_default()
                    .entry(row.linestatus.clone())
                    .or_insert(0) += 1;
                *truth.per_file_returnflag[part]
                    .entry(row.returnflag.to_string())
                    .or_insert(0) += 1;
                row.fields
            }
            Table::Orders => gen_orders_row(&mut rng, idx, spec),
            Table::Customer => gen_customer_row(&mut rng, idx),
        };
        if truth.record_bytes == 0 {
            truth.record_bytes = record_encoded_size(&schema, &fields);
        } else {
            debug_assert_eq!(truth.record_bytes, record_encoded_size(&schema, &fields));
        }
        writeln!(writers[part], "{}", fields.join("|"))?;
    }
    for mut w in writers {
        w.flush()?;
    }

    // FD oracle: within each shipdate group, rows whose linestatus is not
    // the plurality value (ties break to the smallest value).
    if spec.table == Table::Lineitem {
        let plurality: BTreeMap<i64, String> = fd_groups
            .iter()
            .map(|(day, counts)| {
                let best = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(v, _)| v.clone())
                    .unwrap_or_default();
                (*day, best)
            })
            .collect();
        for (linenumber, day, status) in fd_rows {
            let group = &fd_groups[&day];
            if group.len() > 1 && plurality[&day] != status {
                truth.fd_violations.push(linenumber);
                truth.injected_fd += 1;
            }
        }
    }
    truth.histograms = histograms;

    let truth_path = truth_path(out, spec.table);
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
    Ok(truth)
}

pub fn truth_path(out: &Path, table: Table) -> PathBuf {
    out.join(format!("{}.truth.json", table.name()))
}

pub fn load_truth(out: &Path, table: Table) -> Result<GenTruth, std::io::Error> {
    let text = std::fs::read_to_string(truth_path(out, table))?;
    Ok(serde_json::from_str(&text)?)
}
