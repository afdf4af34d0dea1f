//! Auditing toolkit for text-to-SQL benchmarks.
//!
//! The crate parses benchmark gold queries, detects output-tie ambiguities,
//! rewrites tie-prone queries into deterministic equivalents, evaluates
//! predictions with exact-set-match and execution metrics, forges database
//! instances that expose or suppress ties, and audits portability to
//! strict SQL engines.

pub mod sql;
pub mod corpus;
pub mod dialect;
pub mod exec;
pub mod forge;
pub mod harness;
pub mod instance;
pub mod metrics;
pub mod rewrite;
pub mod tie_audit;
