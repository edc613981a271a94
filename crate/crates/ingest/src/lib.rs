//! A declarative data-ingestion engine: programs written in a small
//! ingestion language compile into operator DAGs (ingestion plans), get
//! rewritten by an extensible rule-based optimizer, and execute in parallel
//! over a simulated multi-node block store with in-flight and
//! post-ingestion fault tolerance. Files carry their lineage in their
//! names, which the access layer exploits for replica filtering, key-based
//! splits and pushdown deserialization at query time.

pub mod access;
pub mod cluster;
pub mod gen;
pub mod item;
pub mod lang;
pub mod layout;
pub mod op;
pub mod oplib;
pub mod optimizer;
pub mod plan;
pub mod pred;
pub mod recovery;
pub mod runtime;
pub mod scenario;
