//! Library surface of the marcox CLI: the report table and its CSV format,
//! exposed so integration tests can exercise them directly.

pub mod report;
