use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("empty input")]
    EmptyInput,
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unsupported construct `{construct}` at byte {offset}")]
    Unsupported { construct: String, offset: usize },
}

impl ParseError {
    pub fn syntax(offset: usize, expected: &str, found: &str) -> Self {
        ParseError::Syntax {
            offset,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn unsupported(construct: &str, offset: usize) -> Self {
        ParseError::Unsupported {
            construct: construct.to_string(),
            offset,
        }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::EmptyInput => None,
            ParseError::Syntax { offset, .. } | ParseError::Unsupported { offset, .. } => Some(*offset),
        }
    }

    pub fn is_unsupported(&self) -> bool {
        matches!(self, ParseError::Unsupported { .. })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolveError {
    #[error("no such column: {0}")]
    UnresolvedColumn(String),
    #[error("ambiguous column name: {0}")]
    AmbiguousColumn(String),
    #[error("no such table: {0}")]
    UnknownTable(String),
    #[error("query targets database `{query}` but schema is `{schema}`")]
    SchemaMismatch { query: String, schema: String },
}
