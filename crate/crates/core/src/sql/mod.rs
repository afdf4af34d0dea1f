//! SQL front end: parsing, canonical printing and column resolution.

pub mod ast;
mod error;
mod lexer;
mod parser;
mod printer;
mod resolve;
pub mod schema;

use serde::{Deserialize, Serialize};

pub use ast::*;
pub use error::{ParseError, ResolveError};
pub use parser::parse_sql;
pub use printer::{print_expr, print_sql};
pub use resolve::{infer_affinity, resolve_columns};
pub use schema::{Affinity, Column, DbSchema, ForeignKey, SchemaError, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    /// SQLite as used by the benchmarks: double quotes delimit strings.
    #[default]
    BenchmarkLenient,
    /// Standard SQL: double quotes delimit identifiers.
    StrictStandard,
}

/// Parse and resolve in one step.
pub fn parse_and_resolve(text: &str, schema: &DbSchema) -> Result<SqlAst, SqlError> {
    let ast = parse_sql(text, Dialect::BenchmarkLenient)?;
    Ok(resolve_columns(&ast, schema)?)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}
